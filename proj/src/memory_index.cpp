#include "anchormem/memory_index.hpp"

namespace anchormem {

void index_add(MemoryIndex& index, LlmBackend& backend, const MemoryEntry& entry) {
  Embedding v;
  try {
    v = backend.embed(entry.content);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kEmbeddingFailure) throw;
    throw Error(ErrorCode::kEmbeddingFailure, std::string("embedding failed: ") + e.what());
  }
  index.add(entry.entry_id, v);
}

void index_rebuild(MemoryIndex& index, LlmBackend& backend, const std::vector<MemoryEntry>& log) {
  for (const auto& entry : log) index_add(index, backend, entry);
}

}  // namespace anchormem
