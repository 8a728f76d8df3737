#include "cpmtml/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cpmtml {

namespace {

constexpr std::string_view kFeatureMagic = "FVEC";
constexpr std::string_view kModelMagic = "CPML";
constexpr std::size_t kFeatureHeaderBytes = 4 + 4 + 4 + 4 + 1;

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void matrix(const Matrix& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::size_t remaining() const { return in_.size() - pos_; }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() {
    auto s = bytes(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[k])) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    auto s = bytes(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[k])) << (8 * k);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  Matrix matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = f64();
    return m;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) fail(ErrorKind::kTruncated, "truncated payload: file ends before the declared content");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(Index v, const char* what) {
  if (v < 0 || v > static_cast<Index>(UINT32_MAX)) fail(ErrorKind::kInvalidArgument, std::string(what) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

FeatureHeader parse_feature_header(Reader& rd) {
  if (rd.remaining() < 4 || rd.bytes(4) != kFeatureMagic) fail(ErrorKind::kBadMagic, "bad magic: not a FVEC feature file");
  FeatureHeader h;
  h.version = rd.u32();
  if (h.version != kFeatureFormatVersion)
    fail(ErrorKind::kVersionMismatch, "feature file version " + std::to_string(h.version) + " is not supported");
  h.count = rd.u32();
  h.dim = rd.u32();
  const std::uint8_t tag = rd.u8();
  if (tag > 1) fail(ErrorKind::kInvalidArgument, "unknown dtype tag " + std::to_string(tag));
  h.dtype = static_cast<Dtype>(tag);
  return h;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_int(std::string_view s, const std::filesystem::path& path, std::size_t line) {
  s = trim(s);
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    std::ostringstream os;
    os << path.string() << ":" << line << ": expected an integer, got '" << s << "'";
    fail(ErrorKind::kInvalidArgument, os.str());
  }
  return v;
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    fn(t, n);
  }
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

std::string encode_features(const FeatureSet& set, Dtype dtype) {
  Writer w;
  w.bytes(kFeatureMagic);
  w.u32(kFeatureFormatVersion);
  w.u32(checked_u32(set.count(), "feature count"));
  w.u32(checked_u32(set.dim(), "feature dimension"));
  w.u8(static_cast<std::uint8_t>(dtype));
  const Matrix& x = set.matrix();
  for (Index r = 0; r < x.rows(); ++r)
    for (Index c = 0; c < x.cols(); ++c) {
      if (dtype == Dtype::kF32)
        w.f32(static_cast<float>(x(r, c)));
      else
        w.f64(x(r, c));
    }
  return w.take();
}

FeatureSet decode_features(std::string_view bytes) {
  Reader rd(bytes);
  const FeatureHeader h = parse_feature_header(rd);
  const std::size_t width = h.dtype == Dtype::kF32 ? 4 : 8;
  const auto values = static_cast<std::uint64_t>(h.count) * h.dim;
  if (rd.remaining() < values * width) {
    std::ostringstream os;
    os << "truncated payload: header declares " << h.count << "x" << h.dim << " values, file holds "
       << rd.remaining() / width;
    fail(ErrorKind::kTruncated, os.str());
  }
  if (rd.remaining() > values * width) fail(ErrorKind::kTrailingBytes, "feature file has bytes past the payload");
  Matrix x(h.count, h.dim);
  for (Index r = 0; r < x.rows(); ++r)
    for (Index c = 0; c < x.cols(); ++c) {
      const double v = h.dtype == Dtype::kF32 ? static_cast<double>(rd.f32()) : rd.f64();
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite value at row " << r << ", column " << c;
        fail(ErrorKind::kNonFinite, os.str());
      }
      x(r, c) = v;
    }
  return FeatureSet(std::move(x));
}

void save_features(const FeatureSet& set, const std::filesystem::path& path, Dtype dtype) {
  write_file(path, encode_features(set, dtype));
}

FeatureSet load_features(const std::filesystem::path& path) { return decode_features(read_file(path)); }

FeatureHeader read_feature_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string buf(kFeatureHeaderBytes, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  buf.resize(static_cast<std::size_t>(in.gcount()));
  Reader rd(buf);
  return parse_feature_header(rd);
}

void save_labels(const Labels& labels, const std::filesystem::path& path) {
  std::ostringstream os;
  for (Label l : labels) os << l << '\n';
  write_file(path, os.str());
}

Labels load_labels(const std::filesystem::path& path) {
  Labels out;
  for_each_line(path, [&](std::string_view line, std::size_t n) { out.push_back(parse_int<Label>(line, path, n)); });
  return out;
}

void save_pairs(const PairSet& ps, const std::filesystem::path& path) {
  std::ostringstream os;
  for (const auto& c : ps.constraints) os << c.i << ',' << c.j << ',' << c.y << '\n';
  write_file(path, os.str());
}

PairSet load_pairs(const std::filesystem::path& path) {
  PairSet ps;
  ps.feature_ref = path.string();
  for_each_line(path, [&](std::string_view line, std::size_t n) {
    const auto a = line.find(',');
    const auto b = a == std::string_view::npos ? a : line.find(',', a + 1);
    if (b == std::string_view::npos) {
      std::ostringstream os;
      os << path.string() << ":" << n << ": expected 'i,j,y'";
      fail(ErrorKind::kInvalidArgument, os.str());
    }
    PairConstraint c;
    c.i = parse_int<Index>(line.substr(0, a), path, n);
    c.j = parse_int<Index>(line.substr(a + 1, b - a - 1), path, n);
    c.y = parse_int<int>(line.substr(b + 1), path, n);
    if (c.y != 1 && c.y != -1) {
      std::ostringstream os;
      os << path.string() << ":" << n << ": y must be -1 or 1";
      fail(ErrorKind::kInvalidArgument, os.str());
    }
    if (c.i == c.j) {
      std::ostringstream os;
      os << path.string() << ":" << n << ": a pair must join two distinct items";
      fail(ErrorKind::kInvalidArgument, os.str());
    }
    if (c.i > c.j) std::swap(c.i, c.j);
    ps.constraints.push_back(c);
  });
  return ps;
}

std::string encode_model(const CoupledModel& m) {
  m.validate();
  Writer w;
  w.bytes(kModelMagic);
  w.u32(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(m.variant));
  w.u32(checked_u32(m.num_tasks(), "task count"));
  w.u32(checked_u32(m.proj_dim(), "projection dimension"));
  w.u32(checked_u32(m.input_dim(), "input dimension"));
  w.f64(m.gamma);
  for (double b : m.biases) w.f64(b);
  w.matrix(m.common);
  for (const auto& L : m.task_mats) w.matrix(L);
  for (const auto& R : m.task_rot) w.matrix(R);
  return w.take();
}

CoupledModel decode_model(std::string_view bytes) {
  Reader rd(bytes);
  if (rd.remaining() < 4 || rd.bytes(4) != kModelMagic) fail(ErrorKind::kBadMagic, "bad magic: not a CPML model file");
  const std::uint32_t version = rd.u32();
  if (version != kModelFormatVersion)
    fail(ErrorKind::kVersionMismatch, "model file version " + std::to_string(version) + " is not supported");
  const std::uint8_t tag = rd.u8();
  if (tag > 3) fail(ErrorKind::kInvalidArgument, "unknown variant tag " + std::to_string(tag));

  CoupledModel m;
  m.variant = static_cast<Variant>(tag);
  const Index T = rd.u32();
  const Index d = rd.u32();
  const Index D = rd.u32();
  m.gamma = rd.f64();

  // Validate the declared length before allocating anything.
  const auto blocks = static_cast<std::uint64_t>(T);
  std::uint64_t expected = blocks + static_cast<std::uint64_t>(d) * D;
  if (m.variant == Variant::kCpMtml) expected += blocks * d * D;
  if (m.variant == Variant::kMtLmca) expected += blocks * d * d;
  expected *= 8;
  if (rd.remaining() < expected) fail(ErrorKind::kTruncated, "truncated payload: model file shorter than its header declares");
  if (rd.remaining() > expected) fail(ErrorKind::kTrailingBytes, "model file has bytes past the declared payload");

  for (Index t = 0; t < T; ++t) m.biases.push_back(rd.f64());
  m.common = rd.matrix(d, D);
  if (m.variant == Variant::kCpMtml)
    for (Index t = 0; t < T; ++t) m.task_mats.push_back(rd.matrix(d, D));
  if (m.variant == Variant::kMtLmca)
    for (Index t = 0; t < T; ++t) m.task_rot.push_back(rd.matrix(d, d));
  m.validate();
  return m;
}

void save_model(const CoupledModel& m, const std::filesystem::path& path) { write_file(path, encode_model(m)); }

CoupledModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace cpmtml
