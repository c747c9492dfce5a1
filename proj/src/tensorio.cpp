#include "svcca/tensorio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace svcca::tensorio {

namespace {

static_assert(std::numeric_limits<float>::is_iec559 && std::numeric_limits<double>::is_iec559);

// Header layout (little-endian):
//   0  magic[8]
//   8  version u16
//  10  dtype u8, kind u8
//  12  has_step u8, reserved[3] = 0
//  16  step u64
//  24  rank u32 (2 dense, 4 conv)
//  28  name_len u32
//  32  dims u64[rank]
//  ..  name bytes
//  ..  payload_bytes u64
//  ..  payload
constexpr std::size_t kFixedHeader = 32;

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  template <typename T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  template <typename T>
  T get(const char* what) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(U), what);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= U(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }
  std::string string(std::size_t n) {
    need(n, "truncated header");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) throw FormatError(what);
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(Dtype t) { return t == Dtype::f32 ? 4 : 8; }

std::size_t expected_rank(Kind k) { return k == Kind::dense ? 2 : 4; }

}  // namespace

std::uint64_t ActivationDump::element_count() const {
  std::uint64_t n = 1;
  for (auto v : dims) n *= v;
  return dims.empty() ? 0 : n;
}

void validate(const ActivationDump& dump) {
  if (dump.dtype != Dtype::f32 && dump.dtype != Dtype::f64) throw FormatError("unknown dtype");
  if (dump.kind != Kind::dense && dump.kind != Kind::conv) throw FormatError("unknown kind");
  if (dump.dims.size() != expected_rank(dump.kind)) throw FormatError("dims do not match kind");
  for (auto v : dump.dims)
    if (v < 1) throw FormatError("every dimension must be >= 1");
  if (dump.values.size() != dump.element_count()) throw FormatError("dim/payload mismatch");
  for (double v : dump.values) {
    if (!std::isfinite(v)) throw FormatError("non-finite payload");
    if (dump.dtype == Dtype::f32 && double(static_cast<float>(v)) != v)
      throw FormatError("value not representable as f32");
  }
}

std::size_t header_size(const ActivationDump& dump) {
  return kFixedHeader + 8 * dump.dims.size() + dump.layer_name.size() + 8;
}

std::vector<std::uint8_t> encode(const ActivationDump& dump) {
  validate(dump);
  std::vector<std::uint8_t> out;
  out.reserve(header_size(dump) + dump.values.size() * dtype_size(dump.dtype));
  Writer w(out);
  w.bytes(kMagic.data(), kMagic.size());
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dump.dtype));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dump.kind));
  w.put<std::uint8_t>(dump.step.has_value() ? 1 : 0);
  for (int i = 0; i < 3; ++i) w.put<std::uint8_t>(0);
  w.put<std::uint64_t>(dump.step.value_or(0));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.dims.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.layer_name.size()));
  for (auto v : dump.dims) w.put<std::uint64_t>(v);
  w.bytes(dump.layer_name.data(), dump.layer_name.size());
  w.put<std::uint64_t>(dump.values.size() * dtype_size(dump.dtype));
  if (dump.dtype == Dtype::f32) {
    for (double v : dump.values) w.put<float>(static_cast<float>(v));
  } else {
    for (double v : dump.values) w.put<double>(v);
  }
  return out;
}

ActivationDump decode(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(kMagic.size(), "bad magic");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw FormatError("bad magic");
  r.string(kMagic.size());
  const auto version = r.get<std::uint16_t>("truncated header");
  if (version != kVersion) throw FormatError("version mismatch");
  ActivationDump dump;
  const auto dtype = r.get<std::uint8_t>("truncated header");
  const auto kind = r.get<std::uint8_t>("truncated header");
  if (dtype > 1) throw FormatError("unknown dtype");
  if (kind > 1) throw FormatError("unknown kind");
  dump.dtype = static_cast<Dtype>(dtype);
  dump.kind = static_cast<Kind>(kind);
  const auto has_step = r.get<std::uint8_t>("truncated header");
  for (int i = 0; i < 3; ++i) r.get<std::uint8_t>("truncated header");
  const auto step = r.get<std::uint64_t>("truncated header");
  if (has_step > 1) throw FormatError("bad step flag");
  if (has_step) dump.step = step;
  const auto rank = r.get<std::uint32_t>("truncated header");
  const auto name_len = r.get<std::uint32_t>("truncated header");
  if (rank != expected_rank(dump.kind)) throw FormatError("dims do not match kind");
  for (std::uint32_t i = 0; i < rank; ++i) dump.dims.push_back(r.get<std::uint64_t>("truncated header"));
  dump.layer_name = r.string(name_len);
  const auto payload_bytes = r.get<std::uint64_t>("truncated header");
  for (auto v : dump.dims)
    if (v < 1) throw FormatError("every dimension must be >= 1");
  const std::size_t width = dtype_size(dump.dtype);
  if (payload_bytes != dump.element_count() * width) throw FormatError("dim/payload mismatch");
  if (r.remaining() < payload_bytes) throw FormatError("truncated payload");
  if (r.remaining() > payload_bytes) throw FormatError("dim/payload mismatch");
  dump.values.resize(dump.element_count());
  for (auto& v : dump.values)
    v = dump.dtype == Dtype::f32 ? double(r.get<float>("truncated payload")) : r.get<double>("truncated payload");
  validate(dump);
  return dump;
}

void write_dump(const ActivationDump& dump, const std::filesystem::path& path) {
  const auto bytes = encode(dump);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

ActivationDump read_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dump: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

ActivationDump make_dense(const MatrixXd& acts, std::string name, Dtype dtype, std::optional<std::uint64_t> step) {
  ActivationDump dump;
  dump.dtype = dtype;
  dump.kind = Kind::dense;
  dump.dims = {static_cast<std::uint64_t>(acts.rows()), static_cast<std::uint64_t>(acts.cols())};
  dump.layer_name = std::move(name);
  dump.step = step;
  dump.values.reserve(static_cast<std::size_t>(acts.size()));
  for (Index i = 0; i < acts.rows(); ++i)
    for (Index j = 0; j < acts.cols(); ++j)
      dump.values.push_back(dtype == Dtype::f32 ? double(static_cast<float>(acts(i, j))) : acts(i, j));
  return dump;
}

MatrixXd dense_matrix(const ActivationDump& dump) {
  if (dump.kind != Kind::dense) throw FormatError("expected a dense dump");
  const auto m = static_cast<Index>(dump.dims[0]);
  const auto d = static_cast<Index>(dump.dims[1]);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(dump.values.data(), m, d);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Manifest parse_manifest(const std::string& json_text) {
  using nlohmann::json;
  Manifest m;
  try {
    const json j = json::parse(json_text);
    m.model_id = j.at("model_id").get<std::string>();
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.datapoint_count = j.at("datapoint_count").get<std::uint64_t>();
    for (const auto& c : j.at("checkpoints")) {
      Checkpoint cp;
      cp.step = c.at("step").get<std::uint64_t>();
      for (const auto& l : c.at("layers")) cp.layers.push_back({l.at("name").get<std::string>(), l.at("path").get<std::string>()});
      m.checkpoints.push_back(std::move(cp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  if (m.datapoint_count < 1) throw FormatError("manifest datapoint_count must be >= 1");
  for (std::size_t i = 1; i < m.checkpoints.size(); ++i)
    if (m.checkpoints[i].step <= m.checkpoints[i - 1].step) throw FormatError("manifest steps must be strictly increasing");
  return m;
}

std::string serialize_manifest(const Manifest& m) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["model_id"] = m.model_id;
  j["dataset_id"] = m.dataset_id;
  j["datapoint_count"] = m.datapoint_count;
  j["checkpoints"] = ordered_json::array();
  for (const auto& c : m.checkpoints) {
    ordered_json cj;
    cj["step"] = c.step;
    cj["layers"] = ordered_json::array();
    for (const auto& l : c.layers) cj["layers"].push_back({{"name", l.name}, {"path", l.path.generic_string()}});
    j["checkpoints"].push_back(std::move(cj));
  }
  return j.dump(2) + "\n";
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest: " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_manifest(text);
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << serialize_manifest(manifest);
}

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::filesystem::path& p) {
  return p.is_absolute() ? p : base_dir / p;
}

void validate_manifest_files(const Manifest& manifest, const std::filesystem::path& base_dir) {
  for (const auto& c : manifest.checkpoints)
    for (const auto& l : c.layers) {
      const auto path = resolve(base_dir, l.path);
      if (!std::filesystem::exists(path)) throw FormatError("missing dump: " + path.string());
      const auto dump = read_dump(path);
      if (dump.datapoints() != manifest.datapoint_count) throw FormatError("datapoint count mismatch in " + path.string());
    }
}

}  // namespace svcca::tensorio
