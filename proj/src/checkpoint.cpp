#include "strokenet/checkpoint.hpp"

#include <cstring>
#include <limits>

#include "strokenet/binary_io.hpp"
#include "strokenet/errors.hpp"

namespace strokenet {

namespace {
constexpr char kMagic[4] = {'S', 'T', 'K', 'F'};
constexpr std::size_t kMaxRank = 8;
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const ModelConfig& config,
                                            const KeyValues& extra) {
  KeyValues block = extra;
  for (const auto& [k, v] : config.to_key_values()) block[k] = v;
  const std::string text = format_key_values(block);

  ByteWriter w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.text(text);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, value] : params) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ParameterError("parameter name too long: " + name.substr(0, 32) + "...");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.text(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(value.rank()));
    for (std::size_t d : value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double x : value.data()) w.put<double>(x);
  }
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptFileError(source + ": bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CorruptFileError(source + ": unsupported version " + std::to_string(version), 4);
  }

  Checkpoint ck;
  const std::size_t block_at = r.offset();
  const auto block_len = r.get<std::uint32_t>("config length");
  const std::string text = r.text(block_len, "config block");
  KeyValues kv;
  try {
    kv = parse_key_values(text);
    const auto used = ck.config.apply_key_values(kv);
    for (const auto& key : used) kv.erase(key);
  } catch (const std::invalid_argument& e) {
    throw CorruptFileError(source + ": unreadable config block: " + e.what(), block_at);
  }
  ck.extra = std::move(kv);

  const auto count = r.get<std::uint32_t>("parameter count");
  for (std::uint32_t p = 0; p < count; ++p) {
    const auto name_len = r.get<std::uint16_t>("parameter name length");
    std::string name = r.text(name_len, "parameter name");
    const std::size_t rank_at = r.offset();
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank == 0 || rank > kMaxRank) {
      throw CorruptFileError(source + ": parameter '" + name + "' has rank " + std::to_string(rank),
                             rank_at);
    }
    Shape shape;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::size_t dim_at = r.offset();
      const auto dim = r.get<std::uint32_t>("dims");
      if (dim == 0) throw CorruptFileError(source + ": zero dimension in '" + name + "'", dim_at);
      shape.push_back(dim);
      numel *= dim;
      if (numel > r.remaining() / sizeof(double) + 1) {
        throw CorruptFileError(source + ": truncated data for '" + name + "'", r.offset());
      }
    }
    if (r.remaining() < numel * sizeof(double)) {
      throw CorruptFileError(source + ": truncated while reading data of '" + name + "'", r.offset());
    }
    std::vector<double> data(numel);
    r.bytes(data.data(), numel * sizeof(double), "parameter data");
    if (ck.params.contains(name)) {
      throw CorruptFileError(source + ": duplicate parameter '" + name + "'", rank_at);
    }
    ck.params.add(std::move(name), Tensor(shape, std::move(data)));
  }
  if (r.remaining() != 0) {
    throw CorruptFileError(source + ": " + std::to_string(r.remaining()) + " trailing bytes",
                           r.offset());
  }
  return ck;
}

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path, const KeyValues& extra) {
  write_binary_file(path, encode_checkpoint(params, config, extra));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_binary_file(path), path.string());
}

void check_layout(const ModelParams& params, const ModelConfig& expected) {
  Rng rng(0);
  const ModelParams reference = build_model(expected, rng);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto& want = reference.entry(i);
    if (!params.contains(want.name)) {
      throw CheckpointMismatchError("checkpoint lacks parameter '" + want.name +
                                    "' required by the target configuration");
    }
    const auto& got = params.at(want.name);
    if (got.shape() != want.value.shape()) {
      throw CheckpointMismatchError("parameter '" + want.name + "' has shape " +
                                    shape_to_string(got.shape()) + ", target expects " +
                                    shape_to_string(want.value.shape()));
    }
  }
  for (const auto& entry : params) {
    if (!reference.contains(entry.name)) {
      throw CheckpointMismatchError("checkpoint parameter '" + entry.name +
                                    "' does not exist in the target configuration");
    }
  }
  if (!params.same_layout(reference)) {
    throw CheckpointMismatchError("checkpoint parameter order differs from the target configuration");
  }
}

Checkpoint load_checkpoint_for(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  check_layout(ck.params, expected);
  return ck;
}

}  // namespace strokenet
