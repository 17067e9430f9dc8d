#include "unforge/checkpoint.hpp"

#include "unforge/errors.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

namespace unforge {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::array<std::pair<Provenance, std::string_view>, 5> kProvenanceNames{{
    {Provenance::Ref, "ref"},
    {Provenance::Mem, "mem"},
    {Provenance::For, "for"},
    {Provenance::Oracle, "oracle"},
    {Provenance::Baseline, "baseline"},
}};

constexpr std::size_t kFixedPrefix = 20;

template <class U>
void put_le(std::string& buf, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::string& buf, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  return v;
}

Json model_json(const ModelConfig& c) {
  Json j;
  j["vocab_size"] = c.vocab_size;
  j["ctx_len"] = c.ctx_len;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_from_json(const Json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.ctx_len = j.at("ctx_len").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::string header_text(const ParamStore& theta, const CheckpointMeta& meta) {
  Json h;
  h["model"] = model_json(meta.model);
  Json params = Json::array();
  for (const auto& e : theta.entries()) {
    Json p;
    p["name"] = e.name;
    p["shape"] = e.shape;
    params.push_back(std::move(p));
  }
  h["params"] = std::move(params);
  h["provenance"] = std::string(provenance_name(meta.provenance));
  Json info = Json::object();
  for (const auto& [k, v] : meta.info) info[k] = v;
  h["info"] = std::move(info);
  return h.dump();
}

}  // namespace

std::string_view provenance_name(Provenance p) {
  for (const auto& [v, n] : kProvenanceNames)
    if (v == p) return n;
  return "unknown";
}

Provenance provenance_from_name(std::string_view name) {
  for (const auto& [v, n] : kProvenanceNames)
    if (n == name) return v;
  throw ArgumentError("unknown provenance '" + std::string(name) + "'");
}

ParamStore quantize(const ParamStore& theta) {
  ParamStore out = theta;
  for (auto& x : out.flat()) x = static_cast<Real>(static_cast<float>(x));
  return out;
}

void write_checkpoint(std::ostream& out, const ParamStore& theta, const CheckpointMeta& meta) {
  const std::string header = header_text(theta, meta);
  std::string buf;
  buf.reserve(kFixedPrefix + header.size() + 4 * static_cast<std::size_t>(theta.total_len()));
  buf.append(kCheckpointMagic);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  put_le<std::uint64_t>(buf, header.size());
  buf.append(header);
  for (const Real x : theta.flat()) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kCheckpointMagic.size()) throw FormatError(buf.size(), "truncated magic");
  for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i)
    if (buf[i] != kCheckpointMagic[i]) throw FormatError(i, "bad magic");
  if (buf.size() < kFixedPrefix) throw FormatError(buf.size(), "truncated prefix");
  const auto version = get_le<std::uint32_t>(buf, 8);
  if (version != kCheckpointVersion) throw FormatError(8, "unsupported format version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(buf, 12);
  if (header_len > buf.size() - kFixedPrefix) throw FormatError(12, "header length exceeds file size");

  Checkpoint ck;
  std::vector<std::pair<std::string, Shape>> shapes;
  try {
    const Json h = Json::parse(buf.begin() + kFixedPrefix, buf.begin() + kFixedPrefix + static_cast<std::ptrdiff_t>(header_len));
    ck.meta.model = model_from_json(h.at("model"));
    ck.meta.provenance = provenance_from_name(h.at("provenance").get<std::string>());
    for (const auto& [k, v] : h.at("info").items()) ck.meta.info.emplace_back(k, v.get<std::string>());
    for (const auto& p : h.at("params")) shapes.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<Shape>());
  } catch (const Json::exception& e) {
    throw FormatError(kFixedPrefix, std::string("bad header: ") + e.what());
  } catch (const Error& e) {
    throw FormatError(kFixedPrefix, std::string("bad header: ") + e.what());
  }

  auto layout = std::make_shared<const ParamLayout>(std::move(shapes));
  const std::size_t payload_at = kFixedPrefix + header_len;
  const std::size_t n = static_cast<std::size_t>(layout->total_len());
  const std::size_t have = buf.size() - payload_at;
  if (have != 4 * n)
    throw FormatError(have < 4 * n ? buf.size() : payload_at + 4 * n,
                      "payload holds " + std::to_string(have) + " bytes, expected " + std::to_string(4 * n));
  Vector values(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    values[static_cast<Index>(i)] = std::bit_cast<float>(get_le<std::uint32_t>(buf, payload_at + 4 * i));
  ck.theta = ParamStore(std::move(layout), std::move(values));
  return ck;
}

void save_checkpoint(const ParamStore& theta, const CheckpointMeta& meta, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, theta, meta);
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace unforge
