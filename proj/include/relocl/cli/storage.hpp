// On-disk formats: JSON-lines snapshot streams and binary session
// checkpoints. Every writer goes through write_atomic.
#ifndef RELOCL_CLI_STORAGE_HPP
#define RELOCL_CLI_STORAGE_HPP

#include "relocl/cli/config.hpp"
#include "relocl/experiment/experiment.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>

namespace relocl::cli {

// Writes to a sibling temp file, flushes and renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);  // throws DataError

// Line 1 is a header with the catalog and metadata; each later line is one
// snapshot {"t", "day", "parents", "split"} with parents given by entity id.
std::string dataset_to_jsonl(const sim::TaskDataset& ds);
// `source` names the stream in error messages ("file.jsonl:12: ...").
sim::TaskDataset dataset_from_jsonl(std::istream& in, const std::string& source);

void save_dataset(const std::filesystem::path& path, const sim::TaskDataset& ds);
sim::TaskDataset load_dataset(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

// A session state together with the evaluations made so far.
struct Checkpoint {
  exp::SessionState state;
  exp::RetentionMatrix retention;
  exp::TrainingConfig training;
};

// Layout: 8-byte magic, u32 version, u64 manifest length, JSON manifest,
// u64 payload length, binary payload, u64 FNV-1a checksum of everything before it.
std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Reads only the manifest, e.g. to list checkpoints without their payload.
nlohmann::json checkpoint_manifest(const std::filesystem::path& path);

}  // namespace relocl::cli

#endif  // RELOCL_CLI_STORAGE_HPP
