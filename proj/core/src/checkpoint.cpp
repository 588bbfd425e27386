#include "g2p/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <zlib.h>

#include "g2p/error.hpp"
#include "g2p/run_config.hpp"

namespace g2p {

namespace {

constexpr std::string_view kMagic = "CG2P";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  return v;
}

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

[[noreturn]] void corrupt(const std::string& what) { fail(ErrorCode::kCheckpoint, what); }

// Copies container tensors into `params`, checking names and shapes.
void fill(ModelParameters<float>& params,
          std::vector<std::pair<std::string, Matrix<float>>>& tensors, const std::string& prefix) {
  auto named = params.named_tensors();
  if (named.size() != tensors.size()) {
    corrupt("expected " + std::to_string(named.size()) + " tensors, found " +
            std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, dst] = named[i];
    auto& [found, src] = tensors[i];
    if (prefix + name != found) corrupt("expected tensor " + prefix + name + ", found " + found);
    if (src.rows() != dst->rows() || src.cols() != dst->cols()) {
      corrupt("tensor " + found + " has the wrong shape");
    }
    *dst = std::move(src);
  }
}

}  // namespace

std::string encode_container(const nlohmann::json& header,
                             std::span<const std::pair<std::string, const Matrix<float>*>> tensors) {
  nlohmann::json h = header;
  auto& dir = h["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    dir.push_back({{"name", name},
                   {"shape", {m->rows(), m->cols()}},
                   {"elements", static_cast<std::uint64_t>(m->rows()) * m->cols()}});
  }
  const std::string text = h.dump();
  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  for (const auto& [name, m] : tensors) {
    for (float x : m->values()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  put_u32(out, crc_of(out));
  return out;
}

Container decode_container(std::string_view bytes) {
  constexpr std::size_t kFixed = 4 + 4 + 8;
  if (bytes.size() < kFixed + 4) corrupt("file too short");
  if (bytes.substr(0, 4) != kMagic) corrupt("bad magic");
  const auto stored = static_cast<std::uint32_t>(get_le(bytes, bytes.size() - 4, 4));
  if (crc_of(bytes.substr(0, bytes.size() - 4)) != stored) corrupt("CRC mismatch");
  const auto version = get_le(bytes, 4, 4);
  if (version != kCheckpointVersion) corrupt("unsupported version " + std::to_string(version));
  const auto header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - kFixed - 4) corrupt("header length out of range");

  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(kFixed, header_len));
  } catch (const nlohmann::json::exception&) {
    corrupt("malformed header");
  }
  if (!c.header.is_object() || !c.header.contains("tensors") || !c.header["tensors"].is_array()) {
    corrupt("header has no tensor directory");
  }
  const auto dir = c.header["tensors"];
  c.header.erase("tensors");

  std::size_t pos = kFixed + header_len;
  const std::size_t end = bytes.size() - 4;
  try {
    for (const auto& entry : dir) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::uint64_t>>();
      const auto elements = entry.at("elements").get<std::uint64_t>();
      if (shape.size() != 2 || shape[0] > (1u << 30) || shape[1] > (1u << 30) ||
          shape[0] * shape[1] != elements) {
        corrupt("bad shape for " + name);
      }
      if (elements > (end - pos) / 4) corrupt("payload too short for " + name);
      Matrix<float> m(static_cast<int>(shape[0]), static_cast<int>(shape[1]));
      auto v = m.values();
      for (std::size_t i = 0; i < elements; ++i, pos += 4) {
        v[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, pos, 4)));
      }
      c.tensors.emplace_back(name, std::move(m));
    }
  } catch (const nlohmann::json::exception&) {
    corrupt("malformed tensor directory");
  }
  if (pos != end) corrupt("payload length does not match the directory");
  return c;
}

std::string encode_checkpoint(const Checkpoint& cp) {
  nlohmann::json header{{"kind", "model"},
                        {"model_config", to_json(cp.params.config)},
                        {"train_config", to_json(cp.train)},
                        {"step", cp.step},
                        {"extra", cp.extra}};
  return encode_container(header, cp.params.named_tensors());
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  auto c = decode_container(bytes);
  Checkpoint cp;
  try {
    if (c.header.at("kind") != "model") corrupt("not a model checkpoint");
    cp.params = ModelParameters<float>::zeros(model_config_from_json(c.header.at("model_config")));
    cp.train = train_config_from_json(c.header.at("train_config"));
    cp.step = c.header.at("step").get<std::int64_t>();
    cp.extra = c.header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("malformed header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCheckpoint) throw;
    corrupt(std::string("invalid header: ") + e.what());
  }
  fill(cp.params, c.tensors, "");
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::filesystem::path optimizer_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".optim";
  return p;
}

void save_optimizer_state(const std::filesystem::path& path, const OptimizerState<float>& state,
                          const ModelConfig& config) {
  nlohmann::json header{{"kind", "optimizer"}, {"model_config", to_json(config)}, {"step", state.step}};
  std::vector<std::pair<std::string, const Matrix<float>*>> tensors;
  for (auto& [name, m] : state.first_moment.named_tensors()) tensors.emplace_back("m." + name, m);
  for (auto& [name, m] : state.second_moment.named_tensors()) tensors.emplace_back("v." + name, m);
  write_file_atomic(path, encode_container(header, tensors));
}

OptimizerState<float> load_optimizer_state(const std::filesystem::path& path,
                                           const ModelConfig& expected) {
  auto c = decode_container(read_file(path));
  ModelConfig config;
  std::int64_t step = 0;
  try {
    if (c.header.at("kind") != "optimizer") corrupt("not an optimizer state file");
    config = model_config_from_json(c.header.at("model_config"));
    step = c.header.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("malformed header: ") + e.what());
  }
  check_compatible(expected, config);
  auto state = OptimizerState<float>::zeros(expected);
  state.step = step;
  const auto half = c.tensors.size() / 2;
  std::vector<std::pair<std::string, Matrix<float>>> m(std::make_move_iterator(c.tensors.begin()),
                                                       std::make_move_iterator(c.tensors.begin() + half));
  std::vector<std::pair<std::string, Matrix<float>>> v(std::make_move_iterator(c.tensors.begin() + half),
                                                       std::make_move_iterator(c.tensors.end()));
  fill(state.first_moment, m, "m.");
  fill(state.second_moment, v, "v.");
  return state;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) fail(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace g2p
