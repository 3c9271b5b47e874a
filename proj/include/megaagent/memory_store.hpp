// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace megaagent {

using Embedding = std::vector<double>;

struct MemoryEntry {
  std::string agent;
  std::string text;
  Embedding embedding;
  std::size_t sequence = 0;
};

struct RetrievalConfig {
  std::size_t n_relevant = 1;
  std::size_t k_latest = 6;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Embedding embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
};

/// Feature-hashed bag of words: lower-cased alphanumeric tokens, FNV-1a 64
/// bucketed into `dimension` slots, L2-normalised. Empty text (no tokens)
/// maps to the zero vector.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 64);
  Embedding embed(std::string_view text) const override;
  std::size_t dimension() const override { return dimension_; }

 private:
  std::size_t dimension_;
};

Embedding embed(std::string_view text);
/// Cosine similarity; 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

/// Per-agent long-term memory. Appends for one agent are serialised; a
/// retrieval works on an immutable snapshot taken without blocking appends.
class MemoryStore {
 public:
  explicit MemoryStore(std::shared_ptr<const Embedder> embedder = std::make_shared<HashingEmbedder>(),
                       std::optional<std::filesystem::path> dir = std::nullopt);

  /// Throws Error(EmptyText) for text that is empty after trimming.
  MemoryEntry append(const std::string& agent, const std::string& text);

  /// The n_relevant best cosine matches for `query_text` (ties go to the newer
  /// entry), then the k_latest newest entries in chronological order, skipping
  /// entries already returned as relevance hits.
  std::vector<MemoryEntry> retrieve(const std::string& agent, std::string_view query_text,
                                    const RetrievalConfig& config) const;

  std::vector<MemoryEntry> entries(const std::string& agent) const;
  std::size_t size(const std::string& agent) const;
  const Embedder& embedder() const { return *embedder_; }

 private:
  using Snapshot = std::shared_ptr<const std::vector<MemoryEntry>>;
  struct Shard {
    std::mutex append_mutex;
    Snapshot entries = std::make_shared<const std::vector<MemoryEntry>>();
  };

  Shard* find_shard(const std::string& agent) const;
  Shard& shard(const std::string& agent);
  Snapshot snapshot(const std::string& agent) const;
  void load(const std::filesystem::path& file, const std::string& agent);

  std::shared_ptr<const Embedder> embedder_;
  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex shards_mutex_;
  std::map<std::string, std::unique_ptr<Shard>> shards_;
};

}  // namespace megaagent
