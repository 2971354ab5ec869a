#include "sosmpl/gltf.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace sosmpl {

namespace {

constexpr std::uint32_t kGlbMagic = 0x46546C67;  // "glTF"
constexpr std::uint32_t kChunkJson = 0x4E4F534A;
constexpr std::uint32_t kChunkBin = 0x004E4942;
constexpr int kFloat = 5126, kUInt = 5125, kUShort = 5123;
constexpr int kMaxInfluences = 8;

void putU32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t getU32(std::span<const std::uint8_t> b, std::size_t at) {
  if (at + 4 > b.size()) throw FormatError("truncated GLB", at);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

class BinWriter {
 public:
  // Appends a 4-byte aligned buffer view + accessor; returns the accessor index.
  int add(const Bytes& data, int componentType, const char* type, std::size_t count, nlohmann::json extra = {}) {
    while (bin_.size() % 4) bin_.push_back(0);
    nlohmann::json view = {{"buffer", 0}, {"byteOffset", bin_.size()}, {"byteLength", data.size()}};
    bin_.insert(bin_.end(), data.begin(), data.end());
    views_.push_back(view);
    nlohmann::json acc = {{"bufferView", views_.size() - 1}, {"componentType", componentType}, {"count", count},
                          {"type", type}};
    if (!extra.is_null()) acc.update(extra);
    accessors_.push_back(acc);
    return static_cast<int>(accessors_.size()) - 1;
  }
  Bytes& bin() { return bin_; }
  nlohmann::json views_ = nlohmann::json::array();
  nlohmann::json accessors_ = nlohmann::json::array();

 private:
  Bytes bin_;
};

template <typename T>
void putRaw(Bytes& b, T v) {
  std::uint8_t tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  b.insert(b.end(), tmp, tmp + sizeof(T));
}

Bytes floatData(const Points& p) {
  Bytes b;
  b.reserve(12 * p.size());
  for (const auto& v : p)
    for (int c = 0; c < 3; ++c) putRaw(b, static_cast<float>(v[c]));
  return b;
}

// Per vertex: up to 8 (joint, weight) pairs, strongest first, ties by index.
std::vector<std::vector<std::pair<int, float>>> influences(const Eigen::MatrixXd& w) {
  std::vector<std::vector<std::pair<int, float>>> out(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index v = 0; v < w.rows(); ++v) {
    auto& inf = out[static_cast<std::size_t>(v)];
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      if (w(v, j) != 0.0) inf.emplace_back(static_cast<int>(j), static_cast<float>(w(v, j)));
    std::stable_sort(inf.begin(), inf.end(), [](auto& a, auto& b) { return a.second > b.second; });
    if (inf.size() > kMaxInfluences) inf.resize(kMaxInfluences);
  }
  return out;
}

struct Accessor {
  const std::uint8_t* data;
  std::size_t count;
  int components;
  int componentType;
};

int componentsOf(const std::string& type) {
  if (type == "SCALAR") return 1;
  if (type == "VEC2") return 2;
  if (type == "VEC3") return 3;
  if (type == "VEC4") return 4;
  if (type == "MAT4") return 16;
  throw FormatError("unsupported accessor type " + type, 0);
}

int componentSize(int ct) {
  switch (ct) {
    case kFloat:
    case kUInt: return 4;
    case kUShort: return 2;
    default: throw FormatError("unsupported component type " + std::to_string(ct), 0);
  }
}

Accessor accessor(const nlohmann::json& doc, std::span<const std::uint8_t> bin, int index) {
  const auto& acc = doc.at("accessors").at(index);
  const auto& view = doc.at("bufferViews").at(acc.at("bufferView").get<int>());
  Accessor a;
  a.count = acc.at("count").get<std::size_t>();
  a.components = componentsOf(acc.at("type").get<std::string>());
  a.componentType = acc.at("componentType").get<int>();
  const std::size_t offset = view.value("byteOffset", std::size_t{0}) + acc.value("byteOffset", std::size_t{0});
  const std::size_t need = a.count * a.components * componentSize(a.componentType);
  if (offset + need > bin.size()) throw FormatError("accessor exceeds the binary chunk", offset);
  a.data = bin.data() + offset;
  return a;
}

double component(const Accessor& a, std::size_t i) {
  switch (a.componentType) {
    case kFloat: {
      float f;
      std::memcpy(&f, a.data + 4 * i, 4);
      return f;
    }
    case kUInt: {
      std::uint32_t u;
      std::memcpy(&u, a.data + 4 * i, 4);
      return u;
    }
    default: {
      std::uint16_t u;
      std::memcpy(&u, a.data + 2 * i, 2);
      return u;
    }
  }
}

Points readVec3(const Accessor& a) {
  if (a.components != 3) throw FormatError("expected a VEC3 accessor", 0);
  Points p(a.count);
  for (std::size_t i = 0; i < a.count; ++i) p[i] = Vec3(component(a, 3 * i), component(a, 3 * i + 1), component(a, 3 * i + 2));
  return p;
}

}  // namespace

std::vector<Eigen::Quaterniond> quaternionsFromAxisAngle(std::span<const Vec3> pose) {
  std::vector<Eigen::Quaterniond> q;
  q.reserve(pose.size());
  for (const auto& r : pose) {
    const double angle = r.norm();
    q.emplace_back(angle > 0.0 ? Eigen::Quaterniond(Eigen::AngleAxisd(angle, r / angle)) : Eigen::Quaterniond::Identity());
  }
  return q;
}

Bytes exportGlb(const std::vector<ExportMesh>& meshes, const ExportSkeleton* skeleton) {
  if (meshes.empty()) throw ValidationError("nothing to export");
  BinWriter w;
  nlohmann::json doc;
  doc["asset"] = {{"version", "2.0"}, {"generator", "sosmpl"}};
  nlohmann::json nodes = nlohmann::json::array(), meshJson = nlohmann::json::array();
  nlohmann::json sceneNodes = nlohmann::json::array();
  const std::size_t nj = skeleton ? skeleton->joints.size() : 0;
  if (skeleton) {
    if (skeleton->parents.size() != nj) throw DimensionError("skeleton parents do not match the joints");
    if (!skeleton->rotations.empty() && skeleton->rotations.size() != nj)
      throw DimensionError("skeleton rotations do not match the joints");
  }

  for (const auto& m : meshes) {
    if (m.positions.empty()) throw ValidationError("mesh '" + m.name + "' has no vertices");
    for (const auto& f : m.faces)
      for (auto i : f)
        if (i >= m.positions.size()) throw ValidationError("mesh '" + m.name + "' has an out-of-range index");
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto& p : m.positions)
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], static_cast<double>(static_cast<float>(p[c])));
        hi[c] = std::max(hi[c], static_cast<double>(static_cast<float>(p[c])));
      }
    nlohmann::json attrs;
    attrs["POSITION"] = w.add(floatData(m.positions), kFloat, "VEC3", m.positions.size(),
                              {{"min", {static_cast<float>(lo.x()), static_cast<float>(lo.y()), static_cast<float>(lo.z())}},
                               {"max", {static_cast<float>(hi.x()), static_cast<float>(hi.y()), static_cast<float>(hi.z())}}});
    if (!m.colors.empty()) {
      if (m.colors.size() != m.positions.size()) throw DimensionError("mesh '" + m.name + "' color count mismatch");
      attrs["COLOR_0"] = w.add(floatData(m.colors), kFloat, "VEC3", m.colors.size());
    }
    const bool skinned = skeleton && m.skinWeights.size() > 0;
    if (skinned) {
      if (m.skinWeights.rows() != static_cast<Eigen::Index>(m.positions.size()) ||
          m.skinWeights.cols() != static_cast<Eigen::Index>(nj))
        throw DimensionError("mesh '" + m.name + "' skin weights do not match vertices x joints");
      const auto inf = influences(m.skinWeights);
      std::size_t maxInf = 0;
      for (const auto& v : inf) maxInf = std::max(maxInf, v.size());
      const int sets = maxInf > 4 ? 2 : 1;
      for (int s = 0; s < sets; ++s) {
        Bytes jb, wb;
        for (const auto& v : inf)
          for (int k = 0; k < 4; ++k) {
            const std::size_t idx = 4 * s + k;
            putRaw(jb, static_cast<std::uint16_t>(idx < v.size() ? v[idx].first : 0));
            putRaw(wb, idx < v.size() ? v[idx].second : 0.0f);
          }
        attrs["JOINTS_" + std::to_string(s)] = w.add(jb, kUShort, "VEC4", inf.size());
        attrs["WEIGHTS_" + std::to_string(s)] = w.add(wb, kFloat, "VEC4", inf.size());
      }
    }
    Bytes ib;
    for (const auto& f : m.faces)
      for (auto i : f) putRaw(ib, static_cast<std::uint32_t>(i));
    nlohmann::json prim = {{"attributes", attrs}, {"mode", 4}};
    if (!m.faces.empty()) prim["indices"] = w.add(ib, kUInt, "SCALAR", 3 * m.faces.size());
    meshJson.push_back({{"name", m.name}, {"primitives", nlohmann::json::array({prim})}});
    nlohmann::json node = {{"name", m.name}, {"mesh", meshJson.size() - 1}};
    if (skinned) node["skin"] = 0;
    sceneNodes.push_back(nodes.size());
    nodes.push_back(node);
  }

  if (skeleton) {
    const std::size_t base = nodes.size();
    // Joint positions are rounded first so re-export of an import is exact.
    Points fj(nj);
    for (std::size_t j = 0; j < nj; ++j)
      for (int c = 0; c < 3; ++c) fj[j][c] = static_cast<float>(skeleton->joints[j][c]);
    std::vector<nlohmann::json> jointNodes(nj);
    Bytes ibm;
    for (std::size_t j = 0; j < nj; ++j) {
      const int p = skeleton->parents[j];
      const Vec3 t = p < 0 ? fj[j] : Vec3(fj[j] - fj[p]);
      nlohmann::json n = {{"name", "joint_" + std::to_string(j)},
                          {"translation", {static_cast<float>(t.x()), static_cast<float>(t.y()), static_cast<float>(t.z())}}};
      if (!skeleton->rotations.empty()) {
        const auto& q = skeleton->rotations[j];
        n["rotation"] = {static_cast<float>(q.x()), static_cast<float>(q.y()), static_cast<float>(q.z()),
                         static_cast<float>(q.w())};
      }
      nlohmann::json children = nlohmann::json::array();
      for (std::size_t c = 0; c < nj; ++c)
        if (skeleton->parents[c] == static_cast<int>(j)) children.push_back(base + c);
      if (!children.empty()) n["children"] = children;
      jointNodes[j] = n;
      // Column-major translate(-J).
      const float m[16] = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, static_cast<float>(-fj[j].x()),
                           static_cast<float>(-fj[j].y()), static_cast<float>(-fj[j].z()), 1};
      for (float v : m) putRaw(ibm, v);
    }
    nlohmann::json jointIdx = nlohmann::json::array();
    int root = -1;
    for (std::size_t j = 0; j < nj; ++j) {
      nodes.push_back(jointNodes[j]);
      jointIdx.push_back(base + j);
      if (skeleton->parents[j] < 0) {
        sceneNodes.push_back(base + j);
        if (root < 0) root = static_cast<int>(base + j);
      }
    }
    const int ibmAcc = w.add(ibm, kFloat, "MAT4", nj);
    nlohmann::json skin = {{"inverseBindMatrices", ibmAcc}, {"joints", jointIdx}};
    if (root >= 0) skin["skeleton"] = root;
    doc["skins"] = nlohmann::json::array({skin});
  }

  doc["meshes"] = meshJson;
  doc["nodes"] = nodes;
  doc["scenes"] = nlohmann::json::array({{{"nodes", sceneNodes}}});
  doc["scene"] = 0;
  doc["accessors"] = w.accessors_;
  doc["bufferViews"] = w.views_;
  while (w.bin().size() % 4) w.bin().push_back(0);
  doc["buffers"] = nlohmann::json::array({{{"byteLength", w.bin().size()}}});

  std::string js = doc.dump();
  while (js.size() % 4) js.push_back(' ');
  Bytes out;
  putU32(out, kGlbMagic);
  putU32(out, 2);
  putU32(out, static_cast<std::uint32_t>(12 + 8 + js.size() + 8 + w.bin().size()));
  putU32(out, static_cast<std::uint32_t>(js.size()));
  putU32(out, kChunkJson);
  out.insert(out.end(), js.begin(), js.end());
  putU32(out, static_cast<std::uint32_t>(w.bin().size()));
  putU32(out, kChunkBin);
  out.insert(out.end(), w.bin().begin(), w.bin().end());
  return out;
}

ImportedGlb importGlb(std::span<const std::uint8_t> bytes) {
  if (getU32(bytes, 0) != kGlbMagic) throw FormatError("not a GLB file", 0);
  if (getU32(bytes, 4) != 2) throw FormatError("unsupported GLB version", 4);
  if (getU32(bytes, 8) != bytes.size()) throw FormatError("GLB length field does not match", 8);
  const std::uint32_t jsonLen = getU32(bytes, 12);
  if (getU32(bytes, 16) != kChunkJson || 20 + static_cast<std::size_t>(jsonLen) > bytes.size())
    throw FormatError("missing JSON chunk", 12);
  std::span<const std::uint8_t> bin;
  const std::size_t binAt = 20 + jsonLen;
  if (binAt < bytes.size()) {
    const std::uint32_t binLen = getU32(bytes, binAt);
    if (getU32(bytes, binAt + 4) != kChunkBin || binAt + 8 + binLen > bytes.size())
      throw FormatError("bad binary chunk", binAt);
    bin = bytes.subspan(binAt + 8, binLen);
  }
  ImportedGlb out;
  try {
    const auto doc = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + jsonLen);
    std::vector<int> jointNodes;
    if (doc.contains("skins") && !doc["skins"].empty()) {
      const auto& skin = doc["skins"][0];
      jointNodes = skin.at("joints").get<std::vector<int>>();
      ExportSkeleton sk;
      const std::size_t nj = jointNodes.size();
      sk.parents.assign(nj, -1);
      const Accessor ibm = accessor(doc, bin, skin.at("inverseBindMatrices").get<int>());
      sk.joints.resize(nj);
      bool anyRotation = false;
      for (std::size_t j = 0; j < nj; ++j) {
        sk.joints[j] = -Vec3(component(ibm, 16 * j + 12), component(ibm, 16 * j + 13), component(ibm, 16 * j + 14));
        const auto& node = doc["nodes"].at(jointNodes[j]);
        if (node.contains("children"))
          for (int c : node["children"]) {
            auto it = std::find(jointNodes.begin(), jointNodes.end(), c);
            if (it != jointNodes.end()) sk.parents[static_cast<std::size_t>(it - jointNodes.begin())] = static_cast<int>(j);
          }
        anyRotation = anyRotation || node.contains("rotation");
      }
      if (anyRotation)
        for (std::size_t j = 0; j < nj; ++j) {
          const auto& node = doc["nodes"].at(jointNodes[j]);
          const auto r = node.value("rotation", std::vector<double>{0, 0, 0, 1});
          sk.rotations.emplace_back(r[3], r[0], r[1], r[2]);
        }
      out.skeleton = sk;
    }
    for (const auto& node : doc.at("nodes")) {
      if (!node.contains("mesh")) continue;
      const auto& mj = doc.at("meshes").at(node["mesh"].get<int>());
      const auto& prim = mj.at("primitives").at(0);
      const auto& attrs = prim.at("attributes");
      ExportMesh m;
      m.name = mj.value("name", "");
      m.positions = readVec3(accessor(doc, bin, attrs.at("POSITION").get<int>()));
      if (attrs.contains("COLOR_0")) m.colors = readVec3(accessor(doc, bin, attrs["COLOR_0"].get<int>()));
      if (prim.contains("indices")) {
        const Accessor idx = accessor(doc, bin, prim["indices"].get<int>());
        for (std::size_t i = 0; i + 2 < idx.count; i += 3)
          m.faces.push_back({static_cast<std::uint32_t>(component(idx, i)), static_cast<std::uint32_t>(component(idx, i + 1)),
                             static_cast<std::uint32_t>(component(idx, i + 2))});
      }
      if (node.contains("skin") && out.skeleton) {
        m.skinWeights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.positions.size()),
                                              static_cast<Eigen::Index>(out.skeleton->joints.size()));
        for (int s = 0; s < 2; ++s) {
          const std::string js = "JOINTS_" + std::to_string(s), ws = "WEIGHTS_" + std::to_string(s);
          if (!attrs.contains(js)) continue;
          const Accessor ja = accessor(doc, bin, attrs[js].get<int>());
          const Accessor wa = accessor(doc, bin, attrs[ws].get<int>());
          for (std::size_t v = 0; v < ja.count; ++v)
            for (int k = 0; k < 4; ++k) {
              const double wt = component(wa, 4 * v + k);
              if (wt != 0.0)
                m.skinWeights(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(component(ja, 4 * v + k))) = wt;
            }
        }
      }
      out.meshes.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad glTF JSON: ") + e.what(), 20);
  }
  return out;
}

std::string exportObj(const ExportMesh& mesh) {
  if (!mesh.colors.empty() && mesh.colors.size() != mesh.positions.size())
    throw DimensionError("color count does not match the vertex count");
  std::ostringstream os;
  os.precision(9);
  os << "# sosmpl\n";
  if (!mesh.name.empty()) os << "o " << mesh.name << "\n";
  for (std::size_t i = 0; i < mesh.positions.size(); ++i) {
    const auto& p = mesh.positions[i];
    os << "v " << p.x() << ' ' << p.y() << ' ' << p.z();
    if (!mesh.colors.empty()) os << ' ' << mesh.colors[i].x() << ' ' << mesh.colors[i].y() << ' ' << mesh.colors[i].z();
    os << "\n";
  }
  for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << "\n";
  return os.str();
}

}  // namespace sosmpl
