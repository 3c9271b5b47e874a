// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "megaagent/error.hpp"
#include "megaagent/event_log.hpp"

namespace megaagent {

/// 64-hex SHA-256 commit digest.
class CommitHash {
 public:
  CommitHash() = default;
  explicit CommitHash(std::string hex) : value_(std::move(hex)) {}

  const std::string& str() const { return value_; }
  bool empty() const { return value_.empty(); }
  friend auto operator<=>(const CommitHash&, const CommitHash&) = default;

 private:
  std::string value_;
};

/// Digest over (path, content, parent): sha256(path NUL parent_hex NUL content),
/// where parent_hex is empty for a root commit.
CommitHash compute_commit_hash(std::string_view path, std::string_view content,
                               const std::optional<CommitHash>& parent);

std::string sha256_hex(std::string_view data);

/// Relative, '/'-separated, no empty, "." or ".." components, no NUL or '\\'.
bool is_valid_workspace_path(std::string_view path);

struct FileRecord {
  std::string path;
  std::string content;
  CommitHash head;
};

struct ConflictReport {
  std::string path;
  std::optional<CommitHash> base_hash;  // absent when the writer had no ticket
  CommitHash head_hash;
  std::string base_content;
  std::string head_content;
  std::string attempted_content;

  std::string render() const;
};

using WriteResult = std::variant<CommitHash, ConflictReport>;

class StaleReportError : public Error {
 public:
  explicit StaleReportError(ConflictReport refreshed)
      : Error(ErrorCode::StaleReport, "head moved since the conflict report for " + refreshed.path),
        refreshed_(std::move(refreshed)) {}
  const ConflictReport& refreshed() const { return refreshed_; }

 private:
  ConflictReport refreshed_;
};

struct CommitRecord {
  std::size_t sequence = 0;  // global commit order
  std::string path;
  CommitHash hash;
  std::optional<CommitHash> parent;
};

/// Commit-hash-versioned shared file store with optimistic concurrency.
///
/// Each path has its own linear history. A writer presents the hash it last
/// read (its write ticket); the write commits only if that hash is still the
/// path's HEAD, otherwise a ConflictReport comes back and HEAD is untouched.
/// All commits are serialised behind one exclusive lock, so the commit journal
/// is a total order. Reads take the lock shared.
///
/// With a root directory the store persists as
///   <root>/objects/<hash>      content blob of each commit
///   <root>/refs/<escaped path> HEAD hash of each path
///   <root>/log.jsonl           commit journal
///   <root>/files/<path>        checked-out HEAD content (the sandbox cwd)
class Workspace {
 public:
  Workspace();
  explicit Workspace(std::filesystem::path root, EventLog* log = nullptr);

  FileRecord read(std::string_view path) const;
  /// read() and record the returned hash as `caller`'s ticket for `path`.
  FileRecord read_as(std::string_view caller, std::string_view path);

  WriteResult write(std::string_view path, std::string_view content, const std::optional<CommitHash>& base_hash);
  /// write() with `caller`'s ticket as the base; on success the ticket moves
  /// to the new HEAD.
  WriteResult write_as(std::string_view caller, std::string_view path, std::string_view content);

  CommitHash resolve_conflict(const ConflictReport& report, std::string_view merged_content);

  std::vector<CommitHash> history(std::string_view path) const;
  std::string content_at(const CommitHash& hash) const;
  bool exists(std::string_view path) const;
  /// (path, HEAD) for every path, sorted by path.
  std::vector<std::pair<std::string, CommitHash>> heads() const;
  std::vector<CommitRecord> journal() const;

  std::optional<CommitHash> ticket(std::string_view caller, std::string_view path) const;
  void expire_tickets(std::string_view caller);

  const std::optional<std::filesystem::path>& root() const { return root_; }
  /// Directory holding checked-out HEAD files, if persistent.
  std::optional<std::filesystem::path> tree_dir() const;

 private:
  struct Commit {
    std::string path;
    std::string content;
    std::optional<CommitHash> parent;
  };

  CommitHash commit_locked(std::string_view path, std::string_view content, const std::optional<CommitHash>& parent);
  ConflictReport conflict_locked(std::string_view path, const std::optional<CommitHash>& base,
                                 std::string_view attempted) const;
  void load_from_disk();
  void persist_locked(const CommitRecord& rec, std::string_view content);

  std::optional<std::filesystem::path> root_;
  EventLog* log_ = nullptr;

  mutable std::shared_mutex mutex_;
  std::map<CommitHash, Commit> objects_;
  std::map<std::string, std::vector<CommitHash>, std::less<>> histories_;
  std::vector<CommitRecord> journal_;

  mutable std::mutex ticket_mutex_;
  std::map<std::pair<std::string, std::string>, CommitHash> tickets_;
};

}  // namespace megaagent
