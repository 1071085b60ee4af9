#include "anchormem/error.hpp"
#include "anchormem/hashing.hpp"

#include <cctype>
#include <cmath>
#include <numbers>

namespace anchormem {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyPrompt: return "empty-prompt";
    case ErrorCode::kBackendUnreachable: return "backend-unreachable";
    case ErrorCode::kBackendProtocol: return "backend-protocol";
    case ErrorCode::kEmbeddingFailure: return "embedding-failure";
    case ErrorCode::kMalformedEntry: return "malformed-entry";
    case ErrorCode::kUnreadableFile: return "unreadable-file";
    case ErrorCode::kStorageWriteFailure: return "storage-write-failure";
    case ErrorCode::kIdCollision: return "id-collision";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidParams: return "invalid-params";
    case ErrorCode::kPartialSynthesis: return "partial-synthesis";
    case ErrorCode::kProbeSetVersionMismatch: return "probe-set-version-mismatch";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kNoBaseline: return "no-baseline";
    case ErrorCode::kForbidden: return "forbidden";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

bool is_backend_error(ErrorCode code) {
  return code == ErrorCode::kBackendUnreachable || code == ErrorCode::kBackendProtocol ||
         code == ErrorCode::kEmbeddingFailure || code == ErrorCode::kPartialSynthesis;
}

double SplitMix::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::string> normalized_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::size_t b = i, e = j;
      while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
      while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
      // Pure-punctuation tokens ("-", "#") are kept verbatim.
      std::string tok = b < e ? std::string(text.substr(b, e - b)) : std::string(text.substr(i, j - i));
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      tokens.push_back(std::move(tok));
    }
    i = j;
  }
  return tokens;
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace anchormem
