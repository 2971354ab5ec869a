#include "sosmpl/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "sosmpl/container.hpp"

namespace sosmpl {

namespace {

constexpr double kSumTol = 1e-6;
constexpr int kMaxInfluences = 8;

std::vector<int> topologicalOrder(const std::vector<int>& parents) {
  const int n = static_cast<int>(parents.size());
  std::vector<std::vector<int>> children(n);
  int root = -1;
  for (int j = 0; j < n; ++j) {
    if (parents[j] == -1) {
      if (root != -1) throw InvariantError("kinematic tree has more than one root");
      root = j;
    } else if (parents[j] < 0 || parents[j] >= n) {
      throw InvariantError("joint " + std::to_string(j) + " has invalid parent " + std::to_string(parents[j]));
    } else {
      children[parents[j]].push_back(j);
    }
  }
  if (n > 0 && root == -1) throw InvariantError("kinematic tree has no root");
  std::vector<int> order;
  order.reserve(n);
  if (root >= 0) order.push_back(root);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int c : children[order[i]]) order.push_back(c);
  if (static_cast<int>(order.size()) != n) throw InvariantError("kinematic tree contains a cycle");
  return order;
}

// [V, 3, K] row-major on disk <-> 3V x K matrix in memory.
Eigen::MatrixXd basisFromFlat(const std::vector<double>& flatData, std::size_t v, std::size_t k) {
  Eigen::MatrixXd m(3 * v, k);
  for (std::size_t r = 0; r < 3 * v; ++r)
    for (std::size_t c = 0; c < k; ++c) m(r, c) = flatData[r * k + c];
  return m;
}

std::vector<double> basisToFlat(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  return out;
}

void addBasis(Container& c, const char* name, const Eigen::MatrixXd& basis, std::size_t v) {
  c.add(NamedArray::f32(name, {v, 3, static_cast<std::uint64_t>(basis.cols())}, basisToFlat(basis)));
}

Eigen::MatrixXd readBasis(const NamedArray& a, std::size_t v) {
  if (a.dims.size() != 3 || a.dims[0] != v || a.dims[1] != 3)
    throw FormatError("array '" + a.name + "' must have dims [V, 3, K]", 0);
  return basisFromFlat(a.asDoubles(), v, a.dims[2]);
}

Eigen::MatrixXd readMatrix(const NamedArray& a, std::size_t rows, std::size_t cols) {
  if (a.dims.size() != 2 || a.dims[0] != rows || a.dims[1] != cols)
    throw FormatError("array '" + a.name + "' has dims inconsistent with the model", 0);
  auto d = a.asDoubles();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = d[r * cols + c];
  return m;
}

std::vector<double> matrixToFlat(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  return out;
}

}  // namespace

void checkEdgeManifold(const std::vector<Face>& faces, std::size_t vertexCount) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edgeUse;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto& t = faces[f];
    for (int k = 0; k < 3; ++k) {
      if (t[k] >= vertexCount)
        throw InvariantError("face " + std::to_string(f) + " references vertex " + std::to_string(t[k]) +
                             " out of range");
    }
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw InvariantError("face " + std::to_string(f) + " is degenerate");
    for (int k = 0; k < 3; ++k) {
      auto a = t[k], b = t[(k + 1) % 3];
      if (++edgeUse[{std::min(a, b), std::max(a, b)}] > 2)
        throw InvariantError("non-manifold edge (" + std::to_string(std::min(a, b)) + ", " +
                             std::to_string(std::max(a, b)) + ")");
    }
  }
}

void BodyModel::validate() const {
  const std::size_t v = vertexCount();
  const std::size_t j = jointCount();
  auto rowsOk = [&](const Eigen::MatrixXd& b, const char* name) {
    if (b.cols() > 0 && static_cast<std::size_t>(b.rows()) != 3 * v)
      throw InvariantError(std::string(name) + " must have 3V rows");
  };
  rowsOk(shapeBasis, "shape basis");
  rowsOk(expressionBasis, "expression basis");
  rowsOk(poseBasis, "pose basis");
  if (poseBasis.cols() > 0 && static_cast<std::size_t>(poseBasis.cols()) != 9 * (j - 1))
    throw InvariantError("pose basis must have 9 * (J - 1) columns");
  for (std::size_t i = 0; i < v; ++i)
    if (!templ[i].allFinite()) throw InvariantError("template vertex " + std::to_string(i) + " is not finite");

  topologicalOrder(parents);

  if (static_cast<std::size_t>(jointRegressor.rows()) != j || static_cast<std::size_t>(jointRegressor.cols()) != v)
    throw InvariantError("joint regressor must be J x V");
  for (std::size_t r = 0; r < j; ++r) {
    if ((jointRegressor.row(r).array() < 0.0).any())
      throw InvariantError("joint regressor row " + std::to_string(r) + " has negative entries");
    const double s = jointRegressor.row(r).sum();
    if (std::abs(s - 1.0) > kSumTol)
      throw InvariantError("joint regressor row " + std::to_string(r) + " sums to " + std::to_string(s));
  }

  if (static_cast<std::size_t>(skinWeights.rows()) != v || static_cast<std::size_t>(skinWeights.cols()) != j)
    throw InvariantError("skin weights must be V x J");
  for (std::size_t i = 0; i < v; ++i) {
    auto row = skinWeights.row(i);
    if ((row.array() < 0.0).any())
      throw InvariantError("skin weights of vertex " + std::to_string(i) + " have negative entries");
    const double s = row.sum();
    if (std::abs(s - 1.0) > kSumTol) {
      std::ostringstream os;
      os << "skin weights of vertex " << i << " sum to " << s;
      throw InvariantError(os.str());
    }
    if ((row.array() != 0.0).count() > kMaxInfluences)
      throw InvariantError("vertex " + std::to_string(i) + " has more than 8 skin influences");
  }

  if (partLabels.size() != v) throw InvariantError("part labels must have one entry per vertex");
  for (std::size_t i = 0; i < v; ++i) {
    if (partLabels[i] < 0 || (!partNames.empty() && static_cast<std::size_t>(partLabels[i]) >= partNames.size()))
      throw InvariantError("vertex " + std::to_string(i) + " has an unknown part label");
  }
  checkEdgeManifold(faces, v);
}

int BodyModel::partLabel(std::string_view name) const {
  for (std::size_t i = 0; i < partNames.size(); ++i)
    if (partNames[i] == name) return static_cast<int>(i);
  return -1;
}

ShapeParams ShapeParams::zeros(const BodyModel& model) {
  return {Eigen::VectorXd::Zero(model.shapeCount()), std::vector<Vec3>(model.jointCount(), Vec3::Zero()),
          Eigen::VectorXd::Zero(model.expressionCount())};
}

BodyModel loadBodyModel(std::span<const std::uint8_t> bytes) {
  const Container c = Container::parse(bytes);
  BodyModel m;

  const auto& t = c.require("template");
  if (t.dims.size() != 2 || t.dims[1] != 3) throw FormatError("template must have dims [V, 3]", 0);
  const std::size_t v = t.dims[0];
  const auto tv = t.asDoubles();
  m.templ.resize(v);
  for (std::size_t i = 0; i < v; ++i) m.templ[i] = Vec3(tv[3 * i], tv[3 * i + 1], tv[3 * i + 2]);

  const auto& f = c.require("faces");
  if (f.dims.size() != 2 || f.dims[1] != 3) throw FormatError("faces must have dims [F, 3]", 0);
  const auto fv = f.asU32();
  m.faces.resize(f.dims[0]);
  for (std::size_t i = 0; i < m.faces.size(); ++i) m.faces[i] = {fv[3 * i], fv[3 * i + 1], fv[3 * i + 2]};

  m.shapeBasis = readBasis(c.require("shape_basis"), v);
  const auto parents = c.require("parents").asI32();
  m.parents.assign(parents.begin(), parents.end());
  const std::size_t j = m.parents.size();
  m.jointRegressor = readMatrix(c.require("joint_regressor"), j, v);
  m.skinWeights = readMatrix(c.require("skin_weights"), v, j);
  const auto labels = c.require("part_labels").asI32();
  m.partLabels.assign(labels.begin(), labels.end());

  m.expressionBasis = Eigen::MatrixXd(3 * v, 0);
  m.poseBasis = Eigen::MatrixXd(3 * v, 0);
  if (const auto* e = c.find("expression_basis")) m.expressionBasis = readBasis(*e, v);
  if (const auto* p = c.find("pose_basis")) m.poseBasis = readBasis(*p, v);
  if (const auto* names = c.find("part_names")) {
    std::istringstream is(names->asText());
    for (std::string line; std::getline(is, line);) m.partNames.push_back(line);
  }
  m.validate();
  return m;
}

Bytes saveBodyModel(const BodyModel& m) {
  Container c;
  const std::size_t v = m.vertexCount();
  c.add(NamedArray::f32("template", {v, 3}, std::span<const double>(flat(m.templ).data(), 3 * v)));
  std::vector<std::uint32_t> fv;
  fv.reserve(3 * m.faces.size());
  for (const auto& f : m.faces) fv.insert(fv.end(), f.begin(), f.end());
  c.add(NamedArray::u32("faces", {m.faces.size(), 3}, fv));
  addBasis(c, "shape_basis", m.shapeBasis, v);
  c.add(NamedArray::f32("joint_regressor", {m.jointCount(), v}, matrixToFlat(m.jointRegressor)));
  std::vector<std::int32_t> parents(m.parents.begin(), m.parents.end());
  c.add(NamedArray::i32("parents", {parents.size()}, parents));
  c.add(NamedArray::f32("skin_weights", {v, m.jointCount()}, matrixToFlat(m.skinWeights)));
  std::vector<std::int32_t> labels(m.partLabels.begin(), m.partLabels.end());
  c.add(NamedArray::i32("part_labels", {labels.size()}, labels));
  if (m.expressionBasis.cols() > 0) addBasis(c, "expression_basis", m.expressionBasis, v);
  if (m.poseBasis.cols() > 0) addBasis(c, "pose_basis", m.poseBasis, v);
  if (!m.partNames.empty()) {
    std::string blob;
    for (const auto& n : m.partNames) blob += n + "\n";
    c.add(NamedArray::text("part_names", blob));
  }
  return c.serialize();
}

std::string modelHash(const BodyModel& model) {
  const Bytes b = saveBodyModel(model);
  return hexDigest(b.data(), b.size());
}

Mat3 rodrigues(const Vec3& axisAngle) {
  if (!axisAngle.allFinite()) throw ValidationError("non-finite rotation");
  const double angle = axisAngle.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, axisAngle / angle).toRotationMatrix();
}

Points blendShapes(const BodyModel& model, const ShapeParams& params) {
  const std::size_t v = model.vertexCount();
  if (params.beta.size() != model.shapeCount())
    throw DimensionError("beta has " + std::to_string(params.beta.size()) + " entries, model expects " +
                         std::to_string(model.shapeCount()));
  if (params.expression.size() != model.expressionCount())
    throw DimensionError("expression parameter count does not match the model");
  if (!params.pose.empty() && params.pose.size() != model.jointCount())
    throw DimensionError("pose joint count does not match the model");

  Points out = model.templ;
  auto o = flat(out);
  if (model.shapeCount() > 0) o += model.shapeBasis * params.beta;
  if (model.expressionCount() > 0) o += model.expressionBasis * params.expression;
  if (model.poseBasis.cols() > 0 && !params.pose.empty()) {
    Eigen::VectorXd features(9 * (model.jointCount() - 1));
    for (std::size_t j = 1; j < model.jointCount(); ++j) {
      const Mat3 d = rodrigues(params.pose[j]) - Mat3::Identity();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) features(9 * (j - 1) + 3 * r + c) = d(r, c);
    }
    o += model.poseBasis * features;
  }
  (void)v;
  return out;
}

Points regressJoints(const BodyModel& model, const Points& restVerts) {
  if (restVerts.size() != model.vertexCount()) throw DimensionError("rest vertex count does not match the model");
  Points joints(model.jointCount(), Vec3::Zero());
  for (std::size_t j = 0; j < joints.size(); ++j) {
    Vec3 acc = Vec3::Zero();
    for (std::size_t v = 0; v < restVerts.size(); ++v) {
      const double w = model.jointRegressor(j, v);
      if (w != 0.0) acc += w * restVerts[v];
    }
    joints[j] = acc;
  }
  return joints;
}

Skinning::Skinning(const BodyModel& model, const Points& joints, std::span<const Vec3> pose,
                   const Vec3& rootTranslation)
    : model_(model), joints_(joints) {
  const std::size_t nj = model.jointCount();
  if (joints.size() != nj) throw DimensionError("joint count does not match the model");
  if (!pose.empty() && pose.size() != nj) throw DimensionError("pose joint count does not match the model");
  rot_.assign(nj, Mat3::Identity());
  trans_.assign(nj, Vec3::Zero());
  for (int j : topologicalOrder(model.parents)) {
    const Mat3 local = pose.empty() ? Mat3::Identity() : rodrigues(pose[j]);
    const int p = model.parents[j];
    if (p < 0) {
      rot_[j] = local;
      trans_[j] = joints[j] + rootTranslation;
    } else {
      rot_[j] = rot_[p] * local;
      trans_[j] = trans_[p] + rot_[p] * (joints[j] - joints[p]);
    }
  }
  const std::size_t nv = model.vertexCount();
  blendedRot_.assign(nv, Mat3::Zero());
  blendedOffset_.assign(nv, Vec3::Zero());
  // Weights are renormalized per vertex: stored at f32 they sum to 1 only
  // within ~1e-7, which would scale the rest pose by that much.
  weightScale_.assign(nv, 1.0);
  for (std::size_t v = 0; v < nv; ++v) {
    const double sum = model.skinWeights.row(static_cast<Eigen::Index>(v)).sum();
    if (sum > 0.0) weightScale_[v] = 1.0 / sum;
    for (std::size_t j = 0; j < nj; ++j) {
      const double w = model.skinWeights(v, j) * weightScale_[v];
      if (w == 0.0) continue;
      blendedRot_[v] += w * rot_[j];
      blendedOffset_[v] += w * (trans_[j] - rot_[j] * joints[j]);
    }
  }
}

Points Skinning::apply(const Points& restMesh) const {
  if (restMesh.size() != blendedRot_.size()) throw DimensionError("rest mesh vertex count does not match the model");
  Points out(restMesh.size());
  for (std::size_t v = 0; v < restMesh.size(); ++v) out[v] = blendedRot_[v] * restMesh[v] + blendedOffset_[v];
  return out;
}

Mat3 Skinning::vertexJacobian(std::size_t v) const { return blendedRot_[v]; }

Points Skinning::backward(const Points& gradPosed, Points* jointGrad) const {
  const std::size_t nv = blendedRot_.size();
  const std::size_t nj = rot_.size();
  if (gradPosed.size() != nv) throw DimensionError("gradient vertex count does not match the model");
  Points gradRest(nv);
  for (std::size_t v = 0; v < nv; ++v) gradRest[v] = blendedRot_[v].transpose() * gradPosed[v];
  if (jointGrad == nullptr) return gradRest;
  if (jointGrad->size() != nj) jointGrad->assign(nj, Vec3::Zero());

  Points gradOffset(nj, Vec3::Zero());
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t j = 0; j < nj; ++j) {
      const double w = model_.skinWeights(v, j) * weightScale_[v];
      if (w != 0.0) gradOffset[j] += w * gradPosed[v];
    }
  // offset_j = t_j - A_j J_j
  Points gradT = gradOffset;
  for (std::size_t j = 0; j < nj; ++j) (*jointGrad)[j] -= rot_[j].transpose() * gradOffset[j];
  // t_j = t_p + A_p (J_j - J_p), walked children first.
  auto order = topologicalOrder(model_.parents);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int j = *it;
    const int p = model_.parents[j];
    if (p < 0) {
      (*jointGrad)[j] += gradT[j];
    } else {
      gradT[p] += gradT[j];
      const Vec3 g = rot_[p].transpose() * gradT[j];
      (*jointGrad)[j] += g;
      (*jointGrad)[p] -= g;
    }
  }
  return gradRest;
}

Points lbs(const Points& restMesh, const Points& joints, std::span<const Vec3> pose, const BodyModel& model) {
  return Skinning(model, joints, pose).apply(restMesh);
}

Points vertexNormals(const Points& positions, const std::vector<Face>& faces) {
  Points n(positions.size(), Vec3::Zero());
  for (const auto& f : faces) {
    const Vec3 c = (positions[f[1]] - positions[f[0]]).cross(positions[f[2]] - positions[f[0]]);
    for (auto i : f) n[i] += c;
  }
  for (auto& v : n) {
    const double len = v.norm();
    if (len > 0.0) v /= len;
  }
  return n;
}

BodyModel subdivide(const BodyModel& model) {
  checkEdgeManifold(model.faces, model.vertexCount());
  const std::size_t v0 = model.vertexCount();
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  auto mid = [&](std::uint32_t a, std::uint32_t b) {
    const auto key = std::make_pair(std::min(a, b), std::max(a, b));
    auto [it, inserted] = midpoint.try_emplace(key, static_cast<std::uint32_t>(v0 + edges.size()));
    if (inserted) edges.push_back(key);
    return it->second;
  };

  BodyModel out;
  out.faces.reserve(4 * model.faces.size());
  for (const auto& f : model.faces) {
    const auto ab = mid(f[0], f[1]);
    const auto bc = mid(f[1], f[2]);
    const auto ca = mid(f[2], f[0]);
    out.faces.push_back({f[0], ab, ca});
    out.faces.push_back({ab, f[1], bc});
    out.faces.push_back({ca, bc, f[2]});
    out.faces.push_back({ab, bc, ca});
  }

  const std::size_t v1 = v0 + edges.size();
  auto extendBasis = [&](const Eigen::MatrixXd& b) {
    Eigen::MatrixXd r(3 * v1, b.cols());
    if (b.cols() == 0) return r;
    r.topRows(3 * v0) = b;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [a, c] = edges[e];
      r.middleRows(3 * (v0 + e), 3) = 0.5 * (b.middleRows(3 * a, 3) + b.middleRows(3 * c, 3));
    }
    return r;
  };

  out.templ = model.templ;
  out.templ.resize(v1);
  for (std::size_t e = 0; e < edges.size(); ++e)
    out.templ[v0 + e] = 0.5 * (model.templ[edges[e].first] + model.templ[edges[e].second]);
  out.shapeBasis = extendBasis(model.shapeBasis);
  out.expressionBasis = extendBasis(model.expressionBasis);
  out.poseBasis = extendBasis(model.poseBasis);

  out.parents = model.parents;
  out.jointRegressor = Eigen::MatrixXd::Zero(model.jointCount(), v1);
  out.jointRegressor.leftCols(v0) = model.jointRegressor;

  const std::size_t nj = model.jointCount();
  out.skinWeights = Eigen::MatrixXd::Zero(v1, nj);
  out.skinWeights.topRows(v0) = model.skinWeights;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    Eigen::RowVectorXd w = 0.5 * (model.skinWeights.row(edges[e].first) + model.skinWeights.row(edges[e].second));
    // Averaging two rows can exceed the influence limit; keep the largest.
    std::vector<int> idx(nj);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return w(a) > w(b); });
    for (std::size_t k = kMaxInfluences; k < nj; ++k) w(idx[k]) = 0.0;
    out.skinWeights.row(v0 + e) = w / w.sum();
  }

  out.partLabels = model.partLabels;
  out.partLabels.resize(v1);
  for (std::size_t e = 0; e < edges.size(); ++e) out.partLabels[v0 + e] = model.partLabels[edges[e].first];
  out.partNames = model.partNames;
  return out;
}

}  // namespace sosmpl
