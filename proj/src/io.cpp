#include "neurodyn/io.hpp"

#include <bit>
#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace neurodyn {

namespace {

using nlohmann::json;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

// Bounds-checked little-endian reader.
struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("truncated file: " + path);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(buf[pos]) |
                                       (static_cast<uint8_t>(buf[pos + 1]) << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void check_magic(Reader& r, const char* magic) {
  if (r.bytes(4) != magic) throw IoError("bad magic in " + r.path);
  if (r.u32() != 1) throw IoError("unsupported version in " + r.path);
}

std::string meta_path(const std::string& path) { return path + ".meta.json"; }

json parse_meta(const std::string& path) {
  json m = json::parse(read_checkpoint_meta(path), nullptr, false);
  if (m.is_discarded()) throw IoError("malformed metadata sidecar for " + path);
  return m;
}

const Tensor& pick(const NamedTensors& tensors, const std::string& name,
                   const std::string& path) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("checkpoint " + path + " is missing tensor " + name);
}

bool has_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

}  // namespace

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  if (!f.good() && !f.eof()) throw IoError("read failure on " + path);
  return std::move(ss).str();
}

void atomic_write_bytes(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f.good()) throw IoError("write failure on " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot move " + tmp + " to " + path + ": " + std::strerror(errno));
  }
}

void write_recording(const std::string& path, const Recording& rec) {
  rec.validate();
  std::string out;
  out.reserve(32 + static_cast<size_t>(rec.data.size()) * 8);
  out += "NDTS";
  put_u32(out, 1);
  put_u32(out, static_cast<uint32_t>(rec.channels()));
  put_u64(out, static_cast<uint64_t>(rec.samples));
  put_f64(out, rec.sample_rate_hz);
  for (const std::string& name : rec.channel_names) {
    if (name.size() > 0xffff) throw IoError("channel name too long for NDTS");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
  }
  for (double v : rec.data) put_f64(out, v);
  atomic_write_bytes(path, out);
}

Recording read_recording(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  Reader r{buf, 0, path};
  check_magic(r, "NDTS");
  const uint32_t c = r.u32();
  const uint64_t t = r.u64();
  Recording rec;
  rec.sample_rate_hz = r.f64();
  rec.samples = static_cast<int64_t>(t);
  rec.channel_names.reserve(c);
  for (uint32_t i = 0; i < c; ++i) rec.channel_names.push_back(r.bytes(r.u16()));
  const size_t n = static_cast<size_t>(c) * static_cast<size_t>(t);
  rec.data.resize(n);
  for (size_t i = 0; i < n; ++i) rec.data[i] = r.f64();
  if (r.pos != buf.size()) throw IoError("trailing bytes in " + path);
  rec.validate();
  return rec;
}

void write_csv(const std::string& path, const Recording& rec) {
  rec.validate();
  std::string out;
  for (size_t c = 0; c < rec.channel_names.size(); ++c) {
    const std::string& name = rec.channel_names[c];
    if (name.find_first_of(",\"\n\r") != std::string::npos)
      throw IoError("channel name not CSV-safe: " + name);
    if (c) out += ',';
    out += name;
  }
  out += '\n';
  char num[40];
  for (int64_t t = 0; t < rec.samples; ++t) {
    for (int64_t c = 0; c < rec.channels(); ++c) {
      if (c) out += ',';
      std::snprintf(num, sizeof num, "%.17g", rec.at(c, t));
      out += num;
    }
    out += '\n';
  }
  atomic_write_bytes(path, out);
}

Recording read_csv(const std::string& path, double sample_rate_hz) {
  const std::string buf = read_file_bytes(path);
  std::istringstream in(buf);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  Recording rec;
  rec.sample_rate_hz = sample_rate_hz;
  {
    std::istringstream hdr(line);
    std::string name;
    while (std::getline(hdr, name, ',')) rec.channel_names.push_back(name);
  }
  const size_t c = rec.channel_names.size();
  if (c == 0) throw IoError("CSV header has no channels: " + path);

  std::vector<std::vector<double>> columns(c);
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      if (col >= c) throw IoError("row " + std::to_string(row) + " has too many columns: " + path);
      // from_chars rather than stod: stod throws out_of_range on subnormal
      // values like 5e-324, which our own writer can legitimately emit.
      double v = 0.0;
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || end != cell.data() + cell.size())
        throw IoError("row " + std::to_string(row) + " has a non-numeric cell: " + path);
      columns[col++].push_back(v);
    }
    if (col != c) throw IoError("row " + std::to_string(row) + " has too few columns: " + path);
  }
  rec.samples = static_cast<int64_t>(columns[0].size());
  if (rec.samples == 0) throw IoError("CSV has no data rows: " + path);
  rec.data.reserve(c * static_cast<size_t>(rec.samples));
  for (const auto& column : columns) rec.data.insert(rec.data.end(), column.begin(), column.end());
  rec.validate();
  return rec;
}

void write_checkpoint(const std::string& path, const NamedTensors& tensors,
                      const std::string& meta_json) {
  std::string out;
  out += "NDCK";
  put_u32(out, 1);
  put_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw IoError("tensor name too long for NDCK");
    if (t.rank() > 255) throw IoError("tensor rank too large for NDCK");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (int64_t d : t.dims()) put_u64(out, static_cast<uint64_t>(d));
    for (double v : t.vec()) put_f64(out, v);
  }
  atomic_write_bytes(path, out);
  atomic_write_bytes(meta_path(path), meta_json);
}

NamedTensors read_checkpoint(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  Reader r{buf, 0, path};
  check_magic(r, "NDCK");
  const uint32_t count = r.u32();
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u16());
    const uint8_t rank = r.u8();
    std::vector<int64_t> dims(rank);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = static_cast<int64_t>(r.u64());
      if (d <= 0 || numel > (1ll << 40) / d) throw IoError("implausible tensor dims in " + path);
      numel *= d;
    }
    std::vector<double> data(static_cast<size_t>(rank == 0 ? 1 : numel));
    if (rank == 0) {
      data[0] = r.f64();
    } else {
      for (auto& v : data) v = r.f64();
    }
    out.emplace_back(std::move(name), rank == 0 ? Tensor::scalar(data[0])
                                                : Tensor(std::move(dims), std::move(data)));
  }
  if (r.pos != buf.size()) throw IoError("trailing bytes in " + path);
  return out;
}

std::string read_checkpoint_meta(const std::string& path) {
  return read_file_bytes(meta_path(path));
}

namespace {

Tensor vec_tensor(const std::vector<double>& v, std::vector<int64_t> dims) {
  return Tensor(std::move(dims), v);
}

}  // namespace

void save_plrnn(const std::string& path, const PlrnnParams& p) {
  p.validate();
  NamedTensors ts;
  const int64_t m = p.latent_dim, h = p.hidden_dim, n = p.obs_dim;
  ts.emplace_back("A", vec_tensor(p.A, {m}));
  ts.emplace_back("W2", vec_tensor(p.W2, {m, h}));
  if (!p.W3.empty()) ts.emplace_back("W3", vec_tensor(p.W3, {h, m}));
  ts.emplace_back("b0", vec_tensor(p.b0, {m}));
  if (!p.b1.empty()) ts.emplace_back("b1", vec_tensor(p.b1, {h}));
  if (!p.Wx.empty()) ts.emplace_back("Wx", vec_tensor(p.Wx, {m, n}));
  if (!p.slopes.empty()) {
    const int64_t j = static_cast<int64_t>(p.slopes.size());
    ts.emplace_back("slopes", vec_tensor(p.slopes, {j}));
    ts.emplace_back("thresholds", vec_tensor(p.thresholds, {j}));
  }
  ts.emplace_back("B_obs", vec_tensor(p.B_obs, {n, m}));

  json meta;
  meta["model"] = "plrnn";
  meta["variant"] = variant_name(p.variant);
  meta["latent_dim"] = m;
  meta["hidden_dim"] = h;
  meta["obs_dim"] = n;
  write_checkpoint(path, ts, meta.dump(2) + "\n");
}

PlrnnParams load_plrnn(const std::string& path) {
  const NamedTensors ts = read_checkpoint(path);
  const json meta = parse_meta(path);
  if (meta.value("model", "") != "plrnn") throw IoError("not a dynamics checkpoint: " + path);
  PlrnnParams p;
  p.variant = variant_from_name(meta.at("variant").get<std::string>());
  p.latent_dim = meta.at("latent_dim").get<int64_t>();
  p.hidden_dim = meta.at("hidden_dim").get<int64_t>();
  p.obs_dim = meta.at("obs_dim").get<int64_t>();
  p.A = pick(ts, "A", path).vec();
  p.W2 = pick(ts, "W2", path).vec();
  if (has_tensor(ts, "W3")) p.W3 = pick(ts, "W3", path).vec();
  p.b0 = pick(ts, "b0", path).vec();
  if (has_tensor(ts, "b1")) p.b1 = pick(ts, "b1", path).vec();
  if (has_tensor(ts, "Wx")) p.Wx = pick(ts, "Wx", path).vec();
  if (has_tensor(ts, "slopes")) {
    p.slopes = pick(ts, "slopes", path).vec();
    p.thresholds = pick(ts, "thresholds", path).vec();
  }
  p.B_obs = pick(ts, "B_obs", path).vec();
  try {
    p.validate();
  } catch (const Error& e) {
    throw IoError("inconsistent checkpoint " + path + ": " + e.what());
  }
  return p;
}

void save_dae(const std::string& path, const DaeParams& params) {
  NamedTensors ts;
  for (const auto& [name, t] : params.named()) ts.emplace_back(name, *t);
  json meta;
  meta["model"] = "dae";
  meta["in_channels"] = params.in_channels;
  meta["hidden_channels"] = params.hidden_channels;
  meta["latent_channels"] = params.latent_channels;
  write_checkpoint(path, ts, meta.dump(2) + "\n");
}

DaeParams load_dae(const std::string& path) {
  const NamedTensors ts = read_checkpoint(path);
  const json meta = parse_meta(path);
  if (meta.value("model", "") != "dae") throw IoError("not a denoiser checkpoint: " + path);
  DaeParams p;
  p.in_channels = meta.at("in_channels").get<int64_t>();
  p.hidden_channels = meta.at("hidden_channels").get<int64_t>();
  p.latent_channels = meta.at("latent_channels").get<int64_t>();
  for (auto& [name, t] : p.named()) *t = pick(ts, name, path);
  return p;
}

void save_mtl(const std::string& path, const MtlParams& params) {
  NamedTensors ts;
  for (const auto& [name, t] : params.named()) ts.emplace_back(name, *t);
  json meta;
  meta["model"] = "mtl";
  meta["in_channels"] = params.in_channels;
  meta["d_model"] = params.d_model;
  meta["n_heads"] = params.n_heads;
  meta["n_layers"] = params.n_layers;
  meta["ffn_dim"] = params.ffn_dim;
  meta["n_tokens"] = params.n_tokens;
  write_checkpoint(path, ts, meta.dump(2) + "\n");
}

MtlParams load_mtl(const std::string& path) {
  const NamedTensors ts = read_checkpoint(path);
  const json meta = parse_meta(path);
  if (meta.value("model", "") != "mtl") throw IoError("not an encoder checkpoint: " + path);
  MtlParams p;
  p.in_channels = meta.at("in_channels").get<int64_t>();
  p.d_model = meta.at("d_model").get<int64_t>();
  p.n_heads = meta.at("n_heads").get<int64_t>();
  p.n_layers = meta.at("n_layers").get<int64_t>();
  p.ffn_dim = meta.at("ffn_dim").get<int64_t>();
  p.n_tokens = meta.at("n_tokens").get<int64_t>();
  if (p.n_layers < 1 || p.n_layers > 64) throw IoError("implausible layer count in " + path);
  p.layers.resize(static_cast<size_t>(p.n_layers));
  for (auto& [name, t] : p.named()) *t = pick(ts, name, path);
  if (p.d_model < 1 || p.n_heads < 1 || p.d_model % p.n_heads != 0)
    throw IoError("inconsistent head split in " + path);
  return p;
}

}  // namespace neurodyn
