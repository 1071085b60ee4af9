#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace anchormem {

enum class AnchorKind { kSoul, kMemory, kProcedures, kSalience, kRelations, kIdentityHashFile };

inline constexpr std::array<AnchorKind, 6> kAllAnchorKinds = {
    AnchorKind::kSoul,     AnchorKind::kMemory,    AnchorKind::kProcedures,
    AnchorKind::kSalience, AnchorKind::kRelations, AnchorKind::kIdentityHashFile};

/// SOUL.md, MEMORY.md, PROCEDURES.md, SALIENCE.md, RELATIONS.md, IDENTITY_HASH.md
std::string_view anchor_filename(AnchorKind kind);
/// Short lowercase name used by the API and CLI ("soul", "identity_hash", ...).
std::string_view anchor_name(AnchorKind kind);
/// Accepts the short name or the filename, case-insensitively.
std::optional<AnchorKind> parse_anchor_kind(std::string_view name);
double default_anchor_weight(AnchorKind kind);

enum class SalienceLevel { kLow, kMedium, kHigh };
enum class Valence { kNegative, kNeutral, kPositive };

std::string_view to_string(SalienceLevel level);
std::string_view to_string(Valence valence);

struct AnchorItem {
  /// The source line, verbatim.
  std::string text;
  std::optional<SalienceLevel> level;
  std::optional<Valence> valence;
  std::set<std::string> flags;
  /// Blank lines preceding this item in the file; keeps serialization lossless.
  std::size_t blank_lines_before = 0;

  bool operator==(const AnchorItem&) const = default;
};

struct Anchor {
  AnchorKind kind = AnchorKind::kSoul;
  std::string raw_text;
  std::vector<AnchorItem> items;
  bool enabled = true;
  double weight = 0.0;
};

enum class Role { kUser, kAgent };
std::string_view to_string(Role role);
std::optional<Role> parse_role(std::string_view text);

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// "2026-10-19T07:13:05.120Z"
std::string format_timestamp(Timestamp t);
std::optional<Timestamp> parse_timestamp(std::string_view text);

struct MemoryEntry {
  std::int64_t entry_id = 0;
  Timestamp timestamp{};
  Role role = Role::kUser;
  std::string content;
  std::string session_id;

  bool operator==(const MemoryEntry&) const = default;
};

struct AnchorSet {
  std::string agent_id;
  /// Agent directory; empty for in-memory sets (nothing is persisted).
  std::filesystem::path directory;
  std::map<AnchorKind, Anchor> anchors;
  std::vector<MemoryEntry> memory_log;

  Anchor& at(AnchorKind kind);
  const Anchor& at(AnchorKind kind) const;
  bool enabled(AnchorKind kind) const { return at(kind).enabled; }
  std::int64_t last_entry_id() const { return memory_log.empty() ? 0 : memory_log.back().entry_id; }

  /// Weights of enabled anchors rescaled to sum to 1 (empty when none enabled).
  std::map<AnchorKind, double> normalized_weights() const;
};

/// Six empty, enabled anchors with default weights and an empty log.
AnchorSet make_anchor_set(std::string agent_id, std::filesystem::path directory = {});

// --- anchor text ----------------------------------------------------------

/// One item per non-blank line. Salience anchors run every line through
/// parse_salience; headings in other kinds are plain items.
std::vector<AnchorItem> parse_anchor(AnchorKind kind, std::string_view text);
std::string serialize_items(const std::vector<AnchorItem>& items);

/// Lenient parser for `- <subject>: <LEVEL> importance[, <valence> valence][, <FLAG> flag]`.
/// Lines that do not fit the grammar keep whatever parts did match and get
/// an "UNPARSED" flag; markdown headings get a "HEADING" flag.
std::vector<AnchorItem> parse_salience(std::string_view text);

// --- memory log -----------------------------------------------------------

/// `## [<ISO-8601 UTC>] <role> (session=<id>, entry=<n>)` followed by content lines.
std::string serialize_memory_entry(const MemoryEntry& entry);
std::string serialize_memory_log(const std::vector<MemoryEntry>& log);
/// Throws kMalformedEntry naming the 1-based line of the offending header.
std::vector<MemoryEntry> parse_memory_log(std::string_view text);

// --- persistence and lifecycle --------------------------------------------

/// Loads `<agent_dir>/{SOUL.md, ...}`; the agent id is the directory name.
/// Missing files yield empty enabled anchors.
AnchorSet load_anchor_set(const std::filesystem::path& agent_dir);

/// Creates the agent directory and writes every anchor file.
void save_anchor_set(const AnchorSet& set);

/// Durably appends one entry (flushed and fsynced before returning).
/// Empty content is a kInvalidArgument error; write failure is kStorageWriteFailure.
MemoryEntry append_memory(AnchorSet& set, Role role, std::string content, std::string session_id);

/// Deep copy under `new_agent_id`. A persisted parent forks into a sibling directory.
AnchorSet fork_anchor_set(const AnchorSet& set, const std::string& new_agent_id);

/// Failure injection: disabled anchors contribute nothing downstream. Persisted.
void set_anchor_enabled(AnchorSet& set, AnchorKind kind, bool enabled);

/// Replaces one anchor's text atomically and re-parses it. Memory is append-only (kForbidden).
void write_anchor(AnchorSet& set, AnchorKind kind, std::string text);

/// Text of an anchor as stored (for Memory, the serialized log).
std::string anchor_text(const AnchorSet& set, AnchorKind kind);

/// Writes `contents` to `path` via a temporary file and rename.
void atomic_write_file(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace anchormem
