#pragma once

// Model file layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "KDGM"
//   4       4     uint32 format version (kFormatVersion)
//   8       8     uint64 header length H
//   16      H     JSON header: name, layout, domain, shape, model parameters,
//                 provenance and the block list (name, rows, cols) in weight order
//   16+H    8     uint64 weight count N
//   24+H    8N    N IEEE-754 binary64 weights, blocks concatenated row-major
//   24+H+8N 8     uint64 FNV-1a 64 checksum of every preceding byte
//
// The version is checked before the header is parsed, the count is checked
// against the header's shape before any weight is decoded, and the checksum
// before the model is returned.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdgm/dgm_net.hpp"
#include "kdgm/error.hpp"
#include "kdgm/pde_models.hpp"
#include "kdgm/trainer.hpp"

namespace kdgm {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'K', 'D', 'G', 'M'};

namespace detail {

inline constexpr std::uint64_t kMaxHeaderBytes = 1u << 24;

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("model file truncated while reading ") + what + " (need " + std::to_string(n) +
                        " bytes at offset " + std::to_string(pos_) + ", have " +
                        std::to_string(bytes_.size() - pos_) + ")");
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint64_t u64(const char* what) {
    auto s = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(s[i]) << (8 * i);
    return v;
  }

  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(s[i]) << (8 * i);
    return v;
  }

  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::json header_json(const TrainedModel& m) {
  using nlohmann::json;
  const PdeModel& pm = m.model;
  json h;
  h["name"] = pm.name();
  h["layout"] = pm.layout();
  json dom = json::array();
  for (const auto& b : pm.domain().bounds()) dom.push_back({b.lo, b.hi});
  h["domain"] = dom;
  h["shape"] = {{"input_dim", m.params.shape.input_dim},
                {"width", m.params.shape.width},
                {"layers", m.params.shape.layers}};
  if (pm.kind() == ModelKind::TdHeston) {
    const auto& s = pm.schedule();
    h["model"] = {{"kappa", pm.kappa()},
                  {"schedule",
                   {{"breakpoints", s.breakpoints()}, {"theta", s.theta()}, {"xi", s.xi()}, {"rho", s.rho()}}}};
  } else {
    h["model"] = json::object();
  }
  const Provenance& p = m.provenance;
  h["provenance"] = {{"config_hash", p.config_hash}, {"best_loss", number_or_null(p.best_loss)},
                     {"best_epoch", p.best_epoch},   {"epochs", p.epochs},
                     {"lambda", p.lambda},           {"seed", p.seed},
                     {"parent_hash", p.parent_hash}};
  json blocks = json::array();
  for (const auto& b : parameter_layout(m.params.shape)) blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  h["blocks"] = blocks;
  return h;
}

inline TrainedModel model_from_header(const nlohmann::json& h) {
  const ModelKind kind = parse_model_kind(h.at("name").get<std::string>());
  const auto layout = h.at("layout").get<std::vector<std::string>>();
  std::vector<Interval> bounds;
  for (const auto& b : h.at("domain")) bounds.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
  Domain domain(layout, bounds);

  TrainedModel out;
  switch (kind) {
    case ModelKind::Gbm: out.model = PdeModel::gbm(domain); break;
    case ModelKind::Heston: out.model = PdeModel::heston(domain); break;
    case ModelKind::TdHeston: {
      const auto& mj = h.at("model");
      const auto& sj = mj.at("schedule");
      PiecewiseSchedule s(sj.at("breakpoints").get<std::vector<double>>(), sj.at("theta").get<std::vector<double>>(),
                          sj.at("xi").get<std::vector<double>>(), sj.at("rho").get<std::vector<double>>());
      out.model = PdeModel::td_heston(domain, mj.at("kappa").get<double>(), s);
      break;
    }
  }

  const auto& sh = h.at("shape");
  out.params.shape = {sh.at("input_dim").get<std::size_t>(), sh.at("width").get<std::size_t>(),
                      sh.at("layers").get<std::size_t>()};
  out.params.shape.validate();
  if (out.params.shape.input_dim != out.model.input_dim()) {
    throw FormatError("model file: network input_dim " + std::to_string(out.params.shape.input_dim) +
                      " does not match the " + out.model.name() + " layout (" +
                      std::to_string(out.model.input_dim()) + ")");
  }

  const auto expected = parameter_layout(out.params.shape);
  const auto& blocks = h.at("blocks");
  if (blocks.size() != expected.size()) {
    throw FormatError("model file: block list has " + std::to_string(blocks.size()) + " entries, shape implies " +
                      std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& b = blocks[i];
    if (b.at("name").get<std::string>() != expected[i].name || b.at("rows").get<std::size_t>() != expected[i].rows ||
        b.at("cols").get<std::size_t>() != expected[i].cols) {
      throw FormatError("model file: block " + std::to_string(i) + " does not match the declared shape (expected " +
                        expected[i].name + ")");
    }
  }

  const auto& pj = h.at("provenance");
  Provenance& p = out.provenance;
  p.config_hash = pj.at("config_hash").get<std::string>();
  p.best_loss = number_or_nan(pj.at("best_loss"));
  p.best_epoch = pj.at("best_epoch").get<std::size_t>();
  p.epochs = pj.at("epochs").get<std::size_t>();
  p.lambda = pj.at("lambda").get<double>();
  p.seed = pj.at("seed").get<std::uint64_t>();
  p.parent_hash = pj.at("parent_hash").get<std::string>();
  return out;
}

}  // namespace detail

/// Serialized bytes of a model; identical models give identical bytes.
inline std::vector<std::uint8_t> to_bytes(const TrainedModel& m) {
  m.params.validate();
  if (m.params.shape.input_dim != m.model.input_dim()) throw ShapeError("to_bytes: network input_dim does not match the model layout");
  const std::string header = detail::header_json(m).dump();
  std::vector<std::uint8_t> out;
  out.reserve(40 + header.size() + 8 * m.params.count());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  detail::put_u32(out, kFormatVersion);
  detail::put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  detail::put_u64(out, m.params.count());
  for (const auto& b : m.params.blocks) {
    for (double w : b.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(w));
  }
  detail::put_u64(out, detail::fnv1a64(out));
  return out;
}

inline TrainedModel from_bytes(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw FormatError("model file: bad magic, not a KDGM file");
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion) {
    throw VersionError("model file: format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kFormatVersion) + ")");
  }
  const std::uint64_t hlen = r.u64("header length");
  if (hlen > detail::kMaxHeaderBytes) throw FormatError("model file: implausible header length " + std::to_string(hlen));
  const auto hbytes = r.take(std::size_t(hlen), "header");

  TrainedModel out;
  try {
    out = detail::model_from_header(nlohmann::json::parse(hbytes.begin(), hbytes.end()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model file: invalid header: ") + e.what());
  }

  const std::uint64_t count = r.u64("weight count");
  const std::size_t expected = parameter_count(out.params.shape);
  if (count != expected) {
    throw FormatError("model file: weight count mismatch, expected " + std::to_string(expected) + " found " +
                      std::to_string(count));
  }
  if (r.remaining() != 8 * expected + 8) {
    throw FormatError("model file: size mismatch, expected " + std::to_string(8 * expected + 8) +
                      " bytes of weights and checksum, found " + std::to_string(r.remaining()));
  }
  const std::size_t body_end = r.pos() + 8 * expected;
  const std::uint64_t want = detail::fnv1a64(bytes.first(body_end));

  out.params.blocks.clear();
  for (const auto& b : parameter_layout(out.params.shape)) {
    Tensor t = Tensor::matrix(b.rows, b.cols);
    for (double& w : t.data()) w = std::bit_cast<double>(r.u64("weights"));
    out.params.blocks.push_back(std::move(t));
  }
  if (r.u64("checksum") != want) throw FormatError("model file: checksum mismatch, file is corrupted");
  try {
    out.params.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  return out;
}

/// Writes via a sibling temporary file and renames it into place.
inline void save(const TrainedModel& m, const std::filesystem::path& path) {
  const auto bytes = to_bytes(m);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save: cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!os) throw IoError("save: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("save: cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline TrainedModel load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (is.bad()) throw IoError("load: read failed for " + path.string());
  try {
    return from_bytes(bytes);
  } catch (const FormatError& e) {
    if (dynamic_cast<const VersionError*>(&e)) throw VersionError(path.string() + ": " + e.what());
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace kdgm
