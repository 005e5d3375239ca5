#include "divtrain/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "divtrain/error.hpp"
#include "divtrain/rng.hpp"

namespace divtrain::nn {

namespace {

constexpr char kMagic[4] = {'D', 'I', 'V', 'T'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

std::uint16_t get_u16(const std::string& s, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off])) |
         (static_cast<std::uint16_t>(static_cast<unsigned char>(s[off + 1])) << 8);
}

std::uint64_t get_u64(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

double get_f64(const std::string& s, std::size_t off) {
  std::uint64_t bits = get_u64(s, off);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

std::string serialize(const Ensemble& ens) {
  nlohmann::json manifest;
  manifest["members"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Model& m : ens.members) {
    nlohmann::json jm;
    jm["spec"] = m.spec.to_string();
    jm["alpha"] = m.spec.alpha;
    jm["input_shape"] = {m.spec.input.channels, m.spec.input.height, m.spec.input.width};
    jm["classes"] = m.spec.classes();
    jm["tensors"] = nlohmann::json::array();
    for (const NamedTensor& nt : m.params.items) {
      nlohmann::json jt;
      jt["name"] = nt.name;
      jt["shape"] = nt.tensor.shape();
      jt["offset"] = offset;
      jt["count"] = nt.tensor.numel();
      offset += static_cast<std::uint64_t>(nt.tensor.numel()) * 8;
      jm["tensors"].push_back(jt);
    }
    manifest["members"].push_back(jm);
  }

  const std::string mbytes = manifest.dump();
  std::string out;
  out.reserve(14 + mbytes.size() + offset);
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u64(out, mbytes.size());
  out += mbytes;
  for (const Model& m : ens.members)
    for (const NamedTensor& nt : m.params.items)
      for (std::int64_t i = 0; i < nt.tensor.numel(); ++i) put_f64(out, nt.tensor[i]);
  return out;
}

Ensemble deserialize(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 14 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw IoError("checkpoint " + origin + ": bad magic");
  const std::uint16_t version = get_u16(bytes, 4);
  if (version != kVersion)
    throw IoError("checkpoint " + origin + ": unsupported version " + std::to_string(version));
  const std::uint64_t mlen = get_u64(bytes, 6);
  if (14 + mlen > bytes.size()) throw IoError("checkpoint " + origin + ": truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(14, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + origin + ": manifest parse failure: " + e.what());
  }

  const std::size_t blob_start = 14 + mlen;
  Ensemble ens;
  try {
    for (const auto& jm : manifest.at("members")) {
      const auto ishape = jm.at("input_shape");
      InputShape input{ishape.at(0).get<std::int64_t>(), ishape.at(1).get<std::int64_t>(),
                       ishape.at(2).get<std::int64_t>()};
      ModelSpec spec =
          parse_spec(jm.at("spec").get<std::string>(), input, jm.at("alpha").get<double>());
      const auto expected = param_layout(spec);
      const std::int64_t declared_classes = jm.at("classes").get<std::int64_t>();
      if (declared_classes != spec.classes())
        throw IoError("checkpoint " + origin + ": manifest classes=" +
                      std::to_string(declared_classes) + " but spec has " +
                      std::to_string(spec.classes()));

      Parameters params;
      std::size_t t = 0;
      for (const auto& jt : jm.at("tensors")) {
        std::vector<std::int64_t> shape = jt.at("shape").get<std::vector<std::int64_t>>();
        const std::uint64_t offset = jt.at("offset").get<std::uint64_t>();
        const std::int64_t count = jt.at("count").get<std::int64_t>();
        if (t >= expected.size() || shape != expected[t].second ||
            jt.at("name").get<std::string>() != expected[t].first)
          throw IoError("checkpoint " + origin + ": tensor manifest does not match spec '" +
                        spec.to_string() + "' at entry " + std::to_string(t));
        if (count != Tensor::shape_numel(shape))
          throw IoError("checkpoint " + origin + ": tensor count mismatch at entry " +
                        std::to_string(t));
        if (blob_start + offset + static_cast<std::uint64_t>(count) * 8 > bytes.size())
          throw IoError("checkpoint " + origin + ": truncated tensor data");
        std::vector<double> data(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i)
          data[static_cast<std::size_t>(i)] = get_f64(bytes, blob_start + offset + 8 * i);
        params.items.push_back({jt.at("name").get<std::string>(), Tensor(shape, std::move(data))});
        ++t;
      }
      if (t != expected.size())
        throw IoError("checkpoint " + origin + ": missing tensors for spec '" + spec.to_string() +
                      "'");
      ens.members.push_back({std::move(spec), std::move(params)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + origin + ": malformed manifest: " + e.what());
  }
  if (ens.members.empty()) throw IoError("checkpoint " + origin + ": no members");
  return ens;
}

}  // namespace

void save_checkpoint(const Ensemble& ens, const std::string& path) {
  const std::string bytes = serialize(ens);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

Ensemble load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), path);
}

std::string checkpoint_digest(const Ensemble& ens) {
  const std::string bytes = serialize(ens);
  std::uint64_t h = fnv1a64(bytes);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace divtrain::nn
