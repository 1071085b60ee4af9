#include "anchormem/anchor_store.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include "anchormem/error.hpp"

namespace anchormem {

namespace fs = std::filesystem;

namespace {

constexpr const char* kStateFile = ".anchor_state.json";

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

bool valid_identifier(std::string_view id) {
  if (id.empty() || id == "." || id == ".." || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == ':';
  });
}

// Days since 1970-01-01 for a proleptic Gregorian date (H. Hinnant's algorithm).
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t y;
  unsigned m, d;
};

constexpr Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

void load_state(AnchorSet& set) {
  const fs::path path = set.directory / kStateFile;
  if (!fs::exists(path)) return;
  try {
    const auto state = nlohmann::json::parse(read_file(path));
    for (AnchorKind kind : kAllAnchorKinds) {
      const auto key = std::string(anchor_name(kind));
      if (!state.contains(key)) continue;
      Anchor& anchor = set.at(kind);
      anchor.enabled = state[key].value("enabled", true);
      anchor.weight = std::clamp(state[key].value("weight", anchor.weight), 0.0, 1.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kUnreadableFile, path.string() + ": " + e.what());
  }
}

void save_state(const AnchorSet& set) {
  if (set.directory.empty()) return;
  nlohmann::json state = nlohmann::json::object();
  for (const auto& [kind, anchor] : set.anchors) {
    state[std::string(anchor_name(kind))] = {{"enabled", anchor.enabled}, {"weight", anchor.weight}};
  }
  atomic_write_file(set.directory / kStateFile, state.dump(2) + "\n");
}

void write_all(int fd, std::string_view data, const fs::path& path) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kStorageWriteFailure, path.string() + ": " + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// kinds and enums

std::string_view anchor_filename(AnchorKind kind) {
  switch (kind) {
    case AnchorKind::kSoul: return "SOUL.md";
    case AnchorKind::kMemory: return "MEMORY.md";
    case AnchorKind::kProcedures: return "PROCEDURES.md";
    case AnchorKind::kSalience: return "SALIENCE.md";
    case AnchorKind::kRelations: return "RELATIONS.md";
    case AnchorKind::kIdentityHashFile: return "IDENTITY_HASH.md";
  }
  return "";
}

std::string_view anchor_name(AnchorKind kind) {
  switch (kind) {
    case AnchorKind::kSoul: return "soul";
    case AnchorKind::kMemory: return "memory";
    case AnchorKind::kProcedures: return "procedures";
    case AnchorKind::kSalience: return "salience";
    case AnchorKind::kRelations: return "relations";
    case AnchorKind::kIdentityHashFile: return "identity_hash";
  }
  return "";
}

std::optional<AnchorKind> parse_anchor_kind(std::string_view name) {
  const std::string key = lower(name);
  for (AnchorKind kind : kAllAnchorKinds) {
    if (key == anchor_name(kind) || key == lower(anchor_filename(kind))) return kind;
  }
  return std::nullopt;
}

double default_anchor_weight(AnchorKind kind) {
  switch (kind) {
    case AnchorKind::kSoul: return 0.30;
    case AnchorKind::kMemory: return 0.30;
    case AnchorKind::kProcedures: return 0.15;
    case AnchorKind::kSalience: return 0.10;
    case AnchorKind::kRelations: return 0.10;
    case AnchorKind::kIdentityHashFile: return 0.05;
  }
  return 0.0;
}

std::string_view to_string(SalienceLevel level) {
  switch (level) {
    case SalienceLevel::kLow: return "LOW";
    case SalienceLevel::kMedium: return "MEDIUM";
    case SalienceLevel::kHigh: return "HIGH";
  }
  return "";
}

std::string_view to_string(Valence valence) {
  switch (valence) {
    case Valence::kNegative: return "negative";
    case Valence::kNeutral: return "neutral";
    case Valence::kPositive: return "positive";
  }
  return "";
}

std::string_view to_string(Role role) { return role == Role::kUser ? "user" : "agent"; }

std::optional<Role> parse_role(std::string_view text) {
  if (text == "user") return Role::kUser;
  if (text == "agent") return Role::kAgent;
  return std::nullopt;
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto ms = t.time_since_epoch().count();
  std::int64_t days = ms / 86400000;
  std::int64_t rem = ms % 86400000;
  if (rem < 0) {
    rem += 86400000;
    --days;
  }
  const Civil c = civil_from_days(days);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld.%03lldZ", static_cast<long long>(c.y),
                c.m, c.d, static_cast<long long>(rem / 3600000), static_cast<long long>(rem / 60000 % 60),
                static_cast<long long>(rem / 1000 % 60), static_cast<long long>(rem % 1000));
  return buf;
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  static const std::regex kIso(R"((\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?Z)");
  std::cmatch m;
  if (!std::regex_match(text.begin(), text.end(), m, kIso)) return std::nullopt;
  const auto num = [&](int i) { return std::stoll(m[i].str()); };
  const unsigned mon = static_cast<unsigned>(num(2)), day = static_cast<unsigned>(num(3));
  if (mon < 1 || mon > 12 || day < 1 || day > 31 || num(4) > 23 || num(5) > 59 || num(6) > 60) {
    return std::nullopt;
  }
  std::int64_t millis = 0;
  if (m[7].matched) {
    std::string frac = m[7].str();
    frac.resize(3, '0');
    millis = std::stoll(frac);
  }
  const std::int64_t days = days_from_civil(num(1), mon, day);
  if (civil_from_days(days).d != day) return std::nullopt;  // e.g. Feb 30
  const std::int64_t total = ((days * 24 + num(4)) * 60 + num(5)) * 60 + num(6);
  return Timestamp{std::chrono::milliseconds{total * 1000 + millis}};
}

// ---------------------------------------------------------------------------
// AnchorSet

Anchor& AnchorSet::at(AnchorKind kind) {
  auto it = anchors.find(kind);
  if (it == anchors.end()) throw Error(ErrorCode::kNotFound, "anchor missing from set");
  return it->second;
}

const Anchor& AnchorSet::at(AnchorKind kind) const {
  auto it = anchors.find(kind);
  if (it == anchors.end()) throw Error(ErrorCode::kNotFound, "anchor missing from set");
  return it->second;
}

std::map<AnchorKind, double> AnchorSet::normalized_weights() const {
  std::map<AnchorKind, double> out;
  double total = 0.0;
  for (const auto& [kind, anchor] : anchors) {
    if (anchor.enabled) total += anchor.weight;
  }
  if (total <= 0.0) return out;
  for (const auto& [kind, anchor] : anchors) {
    if (anchor.enabled) out[kind] = anchor.weight / total;
  }
  return out;
}

AnchorSet make_anchor_set(std::string agent_id, fs::path directory) {
  AnchorSet set;
  set.agent_id = std::move(agent_id);
  set.directory = std::move(directory);
  for (AnchorKind kind : kAllAnchorKinds) {
    set.anchors[kind] = Anchor{kind, "", {}, true, default_anchor_weight(kind)};
  }
  return set;
}

// ---------------------------------------------------------------------------
// anchor text

std::vector<AnchorItem> parse_salience(std::string_view text) {
  std::vector<AnchorItem> items;
  std::size_t blanks = 0;
  for (std::string_view line : split_lines(text)) {
    const std::string_view body = trim(line);
    if (body.empty()) {
      ++blanks;
      continue;
    }
    AnchorItem item;
    item.text = std::string(line);
    item.blank_lines_before = blanks;
    blanks = 0;

    if (body.front() == '#') {
      item.flags.insert("HEADING");
      items.push_back(std::move(item));
      continue;
    }
    const bool bullet = body.size() > 1 && (body[0] == '-' || body[0] == '*') &&
                        std::isspace(static_cast<unsigned char>(body[1]));
    const std::size_t colon = body.rfind(':');
    if (!bullet || colon == std::string_view::npos) {
      item.flags.insert("UNPARSED");
      items.push_back(std::move(item));
      continue;
    }

    bool unparsed = false;
    std::string_view attrs = body.substr(colon + 1);
    while (true) {
      const std::size_t comma = attrs.find(',');
      const std::string_view part = trim(attrs.substr(0, comma));
      const std::size_t space = part.find_last_of(" \t");
      if (space == std::string_view::npos) {
        unparsed = true;
      } else {
        const std::string word = std::string(trim(part.substr(0, space)));
        const std::string marker = lower(part.substr(space + 1));
        const std::string value = lower(word);
        if (marker == "importance" && value == "high") {
          item.level = SalienceLevel::kHigh;
        } else if (marker == "importance" && value == "medium") {
          item.level = SalienceLevel::kMedium;
        } else if (marker == "importance" && value == "low") {
          item.level = SalienceLevel::kLow;
        } else if (marker == "valence" && value == "positive") {
          item.valence = Valence::kPositive;
        } else if (marker == "valence" && value == "neutral") {
          item.valence = Valence::kNeutral;
        } else if (marker == "valence" && value == "negative") {
          item.valence = Valence::kNegative;
        } else if (marker == "flag" && !word.empty() && word.find_first_of(" \t") == std::string::npos) {
          std::string flag = word;
          for (char& c : flag) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
          item.flags.insert(flag);
        } else {
          unparsed = true;
        }
      }
      if (comma == std::string_view::npos) break;
      attrs.remove_prefix(comma + 1);
    }
    if (unparsed) item.flags.insert("UNPARSED");
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<AnchorItem> parse_anchor(AnchorKind kind, std::string_view text) {
  if (kind == AnchorKind::kSalience) return parse_salience(text);
  std::vector<AnchorItem> items;
  if (kind == AnchorKind::kMemory) return items;
  std::size_t blanks = 0;
  for (std::string_view line : split_lines(text)) {
    if (trim(line).empty()) {
      ++blanks;
      continue;
    }
    AnchorItem item;
    item.text = std::string(line);
    item.blank_lines_before = blanks;
    blanks = 0;
    items.push_back(std::move(item));
  }
  return items;
}

std::string serialize_items(const std::vector<AnchorItem>& items) {
  std::string out;
  for (const auto& item : items) {
    out.append(item.blank_lines_before, '\n');
    out += item.text;
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// memory log

std::string serialize_memory_entry(const MemoryEntry& entry) {
  std::string out = "## [" + format_timestamp(entry.timestamp) + "] " + std::string(to_string(entry.role)) +
                    " (session=" + entry.session_id + ", entry=" + std::to_string(entry.entry_id) + ")\n";
  // Content lines that could be mistaken for a header (or that start with the
  // escape character itself) get one leading backslash.
  std::size_t start = 0;
  const std::string& c = entry.content;
  while (true) {
    std::size_t end = c.find('\n', start);
    std::string_view line = std::string_view(c).substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (line.starts_with("## [") || line.starts_with("\\")) out += '\\';
    out += line;
    out += '\n';
    if (end == std::string::npos) break;
    start = end + 1;
  }
  out += '\n';
  return out;
}

std::string serialize_memory_log(const std::vector<MemoryEntry>& log) {
  std::string out = "# MEMORY\n\n";
  for (const auto& entry : log) out += serialize_memory_entry(entry);
  return out;
}

std::vector<MemoryEntry> parse_memory_log(std::string_view text) {
  static const std::regex kHeader(
      R"(^## \[([^\]]*)\] (user|agent) \(session=([A-Za-z0-9_.:\-]+), entry=([0-9]{1,18})\)$)");

  // A record torn by a crash mid-append never ends in a newline; drop it.
  if (!text.empty() && text.back() != '\n') {
    const std::size_t last_header = text.rfind("\n## [");
    text = text.substr(0, last_header == std::string_view::npos ? 0 : last_header + 1);
  }

  std::vector<MemoryEntry> log;
  std::vector<std::string> content_lines;
  bool in_entry = false;

  const auto finish = [&] {
    if (!in_entry) return;
    // One blank separator line terminates each record.
    if (!content_lines.empty() && content_lines.back().empty()) content_lines.pop_back();
    std::string content;
    for (std::size_t i = 0; i < content_lines.size(); ++i) {
      if (i) content += '\n';
      content += content_lines[i];
    }
    log.back().content = std::move(content);
    content_lines.clear();
  };

  std::size_t line_no = 0;
  for (std::string_view line : split_lines(text)) {
    ++line_no;
    if (line.starts_with("## [")) {
      std::cmatch m;
      const auto where = " at line " + std::to_string(line_no);
      if (!std::regex_match(line.begin(), line.end(), m, kHeader)) {
        throw Error(ErrorCode::kMalformedEntry, "malformed memory entry header" + where);
      }
      const auto ts = parse_timestamp(m[1].str());
      if (!ts) throw Error(ErrorCode::kMalformedEntry, "malformed timestamp '" + m[1].str() + "'" + where);
      finish();
      MemoryEntry entry;
      entry.timestamp = *ts;
      entry.role = *parse_role(m[2].str());
      entry.session_id = m[3].str();
      entry.entry_id = std::stoll(m[4].str());
      if (!log.empty() && entry.entry_id <= log.back().entry_id) {
        throw Error(ErrorCode::kMalformedEntry, "entry ids must strictly increase" + where);
      }
      if (!log.empty() && entry.timestamp < log.back().timestamp) {
        throw Error(ErrorCode::kMalformedEntry, "timestamps must not decrease" + where);
      }
      log.push_back(std::move(entry));
      in_entry = true;
      continue;
    }
    if (!in_entry) continue;  // preamble before the first header
    std::string_view body = line;
    if (body.starts_with("\\")) body.remove_prefix(1);
    content_lines.emplace_back(body);
  }
  finish();
  return log;
}

// ---------------------------------------------------------------------------
// files

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kUnreadableFile, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::kUnreadableFile, "error reading " + path.string());
  return ss.str();
}

void atomic_write_file(const fs::path& path, std::string_view contents) {
  const fs::path tmp = path.string() + ".tmp";
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kStorageWriteFailure, tmp.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, contents, tmp);
  } catch (...) {
    ::close(fd);
    throw;
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    throw Error(ErrorCode::kStorageWriteFailure, tmp.string() + ": " + std::strerror(errno));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kStorageWriteFailure, path.string() + ": " + ec.message());
}

AnchorSet load_anchor_set(const fs::path& agent_dir) {
  std::error_code ec;
  if (!fs::is_directory(agent_dir, ec)) {
    throw Error(ErrorCode::kNotFound, "agent directory does not exist: " + agent_dir.string());
  }
  AnchorSet set = make_anchor_set(agent_dir.filename().string(), agent_dir);
  for (AnchorKind kind : kAllAnchorKinds) {
    const fs::path path = agent_dir / anchor_filename(kind);
    if (!fs::exists(path)) continue;
    std::string text = read_file(path);
    Anchor& anchor = set.at(kind);
    if (kind == AnchorKind::kMemory) {
      set.memory_log = parse_memory_log(text);
    } else {
      anchor.items = parse_anchor(kind, text);
      anchor.raw_text = std::move(text);
    }
  }
  load_state(set);
  return set;
}

void save_anchor_set(const AnchorSet& set) {
  if (set.directory.empty()) throw Error(ErrorCode::kInvalidArgument, "anchor set has no directory");
  std::error_code ec;
  fs::create_directories(set.directory, ec);
  if (ec) throw Error(ErrorCode::kStorageWriteFailure, set.directory.string() + ": " + ec.message());
  for (const auto& [kind, anchor] : set.anchors) {
    const fs::path path = set.directory / anchor_filename(kind);
    atomic_write_file(path, kind == AnchorKind::kMemory ? serialize_memory_log(set.memory_log) : anchor.raw_text);
  }
  save_state(set);
}

MemoryEntry append_memory(AnchorSet& set, Role role, std::string content, std::string session_id) {
  if (content.empty()) throw Error(ErrorCode::kInvalidArgument, "memory content must be non-empty");
  if (!valid_identifier(session_id)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid session id '" + session_id + "'");
  }
  MemoryEntry entry;
  entry.entry_id = set.last_entry_id() + 1;
  entry.timestamp = std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
  if (!set.memory_log.empty() && entry.timestamp < set.memory_log.back().timestamp) {
    entry.timestamp = set.memory_log.back().timestamp;
  }
  entry.role = role;
  entry.content = std::move(content);
  entry.session_id = std::move(session_id);

  if (!set.directory.empty()) {
    const fs::path path = set.directory / anchor_filename(AnchorKind::kMemory);
    const bool fresh = !fs::exists(path);
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorCode::kStorageWriteFailure, path.string() + ": " + std::strerror(errno));
    std::string record = fresh ? "# MEMORY\n\n" : "";
    record += serialize_memory_entry(entry);
    try {
      write_all(fd, record, path);
    } catch (...) {
      ::close(fd);
      throw;
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) {
      throw Error(ErrorCode::kStorageWriteFailure, path.string() + ": " + std::strerror(errno));
    }
  }
  set.memory_log.push_back(entry);
  return entry;
}

AnchorSet fork_anchor_set(const AnchorSet& set, const std::string& new_agent_id) {
  if (new_agent_id == set.agent_id) {
    throw Error(ErrorCode::kIdCollision, "fork id '" + new_agent_id + "' equals the parent id");
  }
  if (!valid_identifier(new_agent_id)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid agent id '" + new_agent_id + "'");
  }
  AnchorSet child = set;
  child.agent_id = new_agent_id;
  if (!set.directory.empty()) {
    child.directory = set.directory.parent_path() / new_agent_id;
    if (fs::exists(child.directory)) {
      throw Error(ErrorCode::kIdCollision, "agent '" + new_agent_id + "' already exists");
    }
    save_anchor_set(child);
  }
  return child;
}

void set_anchor_enabled(AnchorSet& set, AnchorKind kind, bool enabled) {
  set.at(kind).enabled = enabled;
  save_state(set);
}

void write_anchor(AnchorSet& set, AnchorKind kind, std::string text) {
  if (kind == AnchorKind::kMemory) {
    throw Error(ErrorCode::kForbidden, "MEMORY.md is append-only");
  }
  Anchor& anchor = set.at(kind);
  auto items = parse_anchor(kind, text);
  if (!set.directory.empty()) atomic_write_file(set.directory / anchor_filename(kind), text);
  anchor.items = std::move(items);
  anchor.raw_text = std::move(text);
}

std::string anchor_text(const AnchorSet& set, AnchorKind kind) {
  if (kind != AnchorKind::kMemory) return set.at(kind).raw_text;
  if (!set.directory.empty()) {
    const fs::path path = set.directory / anchor_filename(kind);
    if (fs::exists(path)) return read_file(path);
  }
  return serialize_memory_log(set.memory_log);
}

}  // namespace anchormem
