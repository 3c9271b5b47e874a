// SPDX-License-Identifier: Apache-2.0
#include "megaagent/memory_store.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "megaagent/error.hpp"
#include "megaagent/text_util.hpp"

namespace megaagent {

namespace fs = std::filesystem;

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw Error(ErrorCode::InvalidConfig, "embedding dimension must be positive");
}

Embedding HashingEmbedder::embed(std::string_view text) const {
  Embedding v(dimension_, 0.0);
  std::uint64_t h = 0;
  bool in_token = false;
  auto flush = [&] {
    if (in_token) v[h % dimension_] += 1.0;
    in_token = false;
  };
  for (char raw : text) {
    auto c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      if (!in_token) {
        h = 0xcbf29ce484222325ULL;
        in_token = true;
      }
      h ^= static_cast<std::uint64_t>(std::tolower(c));
      h *= 0x100000001b3ULL;
    } else {
      flush();
    }
  }
  flush();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

Embedding embed(std::string_view text) {
  static const HashingEmbedder embedder;
  return embedder.embed(text);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

MemoryStore::MemoryStore(std::shared_ptr<const Embedder> embedder, std::optional<fs::path> dir)
    : embedder_(std::move(embedder)), dir_(std::move(dir)) {
  if (!dir_) return;
  fs::create_directories(*dir_);
  for (const auto& item : fs::directory_iterator(*dir_)) {
    if (item.path().extension() == ".jsonl") load(item.path(), item.path().stem().string());
  }
}

void MemoryStore::load(const fs::path& file, const std::string& agent) {
  auto entries = std::make_shared<std::vector<MemoryEntry>>();
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    MemoryEntry e;
    e.agent = agent;
    e.sequence = j.at("seq").get<std::size_t>();
    e.text = j.at("text").get<std::string>();
    e.embedding = j.at("vec").get<Embedding>();
    if (e.embedding.size() != embedder_->dimension())
      throw Error(ErrorCode::InvariantViolation, "stored embedding dimension differs in " + file.string());
    if (!entries->empty() && e.sequence <= entries->back().sequence)
      throw Error(ErrorCode::InvariantViolation, "non-increasing memory sequence in " + file.string());
    entries->push_back(std::move(e));
  }
  shard(agent).entries = std::move(entries);
}

MemoryStore::Shard* MemoryStore::find_shard(const std::string& agent) const {
  std::shared_lock lock(shards_mutex_);
  auto it = shards_.find(agent);
  return it == shards_.end() ? nullptr : it->second.get();
}

MemoryStore::Shard& MemoryStore::shard(const std::string& agent) {
  if (auto* s = find_shard(agent)) return *s;
  std::unique_lock lock(shards_mutex_);
  auto& slot = shards_[agent];
  if (!slot) slot = std::make_unique<Shard>();
  return *slot;
}

MemoryStore::Snapshot MemoryStore::snapshot(const std::string& agent) const {
  auto* s = find_shard(agent);
  if (!s) return std::make_shared<const std::vector<MemoryEntry>>();
  return std::atomic_load(&s->entries);
}

MemoryEntry MemoryStore::append(const std::string& agent, const std::string& text) {
  if (text::trim(text).empty()) throw Error(ErrorCode::EmptyText, "memory entry for " + agent);
  Shard& s = shard(agent);
  std::lock_guard lock(s.append_mutex);
  auto current = std::atomic_load(&s.entries);
  MemoryEntry entry;
  entry.agent = agent;
  entry.text = text;
  entry.embedding = embedder_->embed(text);
  entry.sequence = current->empty() ? 0 : current->back().sequence + 1;

  if (dir_) {
    std::ofstream out(*dir_ / (agent + ".jsonl"), std::ios::app);
    nlohmann::json j{{"seq", entry.sequence}, {"text", entry.text}, {"vec", entry.embedding}};
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
  auto next = std::make_shared<std::vector<MemoryEntry>>(*current);
  next->push_back(entry);
  std::atomic_store(&s.entries, Snapshot(std::move(next)));
  return entry;
}

std::vector<MemoryEntry> MemoryStore::retrieve(const std::string& agent, std::string_view query_text,
                                               const RetrievalConfig& config) const {
  Snapshot snap = snapshot(agent);
  const auto& all = *snap;
  std::vector<MemoryEntry> result;
  if (all.empty()) return result;

  Embedding query = embedder_->embed(query_text);
  std::vector<std::pair<double, std::size_t>> scored;  // (similarity, index)
  scored.reserve(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) scored.emplace_back(cosine(query, all[i].embedding), i);
  const std::size_t n = std::min(config.n_relevant, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [&](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return all[a.second].sequence > all[b.second].sequence;
                    });

  std::vector<bool> taken(all.size(), false);
  for (std::size_t r = 0; r < n; ++r) {
    taken[scored[r].second] = true;
    result.push_back(all[scored[r].second]);
  }
  const std::size_t tail_start = all.size() > config.k_latest ? all.size() - config.k_latest : 0;
  for (std::size_t i = tail_start; i < all.size(); ++i)
    if (!taken[i]) result.push_back(all[i]);
  return result;
}

std::vector<MemoryEntry> MemoryStore::entries(const std::string& agent) const { return *snapshot(agent); }

std::size_t MemoryStore::size(const std::string& agent) const { return snapshot(agent)->size(); }

}  // namespace megaagent
