// SPDX-License-Identifier: Apache-2.0
#include "megaagent/workspace.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include <json.hpp>

namespace megaagent {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0x0f]);
  }
  return out;
}

CommitHash compute_commit_hash(std::string_view path, std::string_view content,
                               const std::optional<CommitHash>& parent) {
  std::string buf;
  buf.reserve(path.size() + content.size() + 66);
  buf.append(path);
  buf.push_back('\0');
  if (parent) buf.append(parent->str());
  buf.push_back('\0');
  buf.append(content);
  return CommitHash(sha256_hex(buf));
}

bool is_valid_workspace_path(std::string_view path) {
  if (path.empty() || path.size() > 512 || path.front() == '/') return false;
  if (path.find('\0') != std::string_view::npos || path.find('\\') != std::string_view::npos) return false;
  std::size_t start = 0;
  while (start <= path.size()) {
    auto slash = path.find('/', start);
    auto part = path.substr(start, slash == std::string_view::npos ? std::string_view::npos : slash - start);
    if (part.empty() || part == "." || part == "..") return false;
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  return true;
}

std::string ConflictReport::render() const {
  std::ostringstream out;
  out << "CONFLICT on " << path << "\n";
  out << "base: " << (base_hash ? base_hash->str() : std::string("(none - file was not read first)")) << "\n";
  out << "head: " << head_hash.str() << "\n";
  out << "--- head content ---\n" << head_content << "\n";
  out << "--- your content ---\n" << attempted_content << "\n";
  out << "Read the file again, merge both versions, and write the merged content.";
  return out.str();
}

namespace {

std::string escape_ref(std::string_view path) {
  std::string out;
  for (unsigned char c : path) {
    if (std::isalnum(c) || c == '.' || c == '_' || c == '-') {
      out.push_back(static_cast<char>(c));
    } else {
      out += fmt::format("%{:02X}", c);
    }
  }
  return out;
}

void atomic_write(const fs::path& target, std::string_view data) {
  fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
  }
  fs::rename(tmp, target);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "missing object " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_path(std::string_view path) {
  if (!is_valid_workspace_path(path)) throw Error(ErrorCode::InvalidPath, std::string(path));
}

}  // namespace

Workspace::Workspace() = default;

Workspace::Workspace(fs::path root, EventLog* log) : root_(std::move(root)), log_(log) {
  fs::create_directories(*root_ / "objects");
  fs::create_directories(*root_ / "refs");
  fs::create_directories(*root_ / "files");
  load_from_disk();
}

std::optional<fs::path> Workspace::tree_dir() const {
  if (!root_) return std::nullopt;
  return *root_ / "files";
}

void Workspace::load_from_disk() {
  auto journal_path = *root_ / "log.jsonl";
  if (!fs::exists(journal_path)) return;
  std::ifstream in(journal_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    CommitRecord rec;
    rec.sequence = j.at("seq").get<std::size_t>();
    rec.path = j.at("path").get<std::string>();
    rec.hash = CommitHash(j.at("hash").get<std::string>());
    if (!j.at("parent").is_null()) rec.parent = CommitHash(j.at("parent").get<std::string>());
    std::string content = slurp(*root_ / "objects" / rec.hash.str());
    if (compute_commit_hash(rec.path, content, rec.parent) != rec.hash)
      throw Error(ErrorCode::InvariantViolation, "hash chain mismatch at " + rec.hash.str());
    auto& hist = histories_[rec.path];
    if ((hist.empty() && rec.parent) || (!hist.empty() && rec.parent != hist.back()))
      throw Error(ErrorCode::InvariantViolation, "journal is not a linear chain for " + rec.path);
    hist.push_back(rec.hash);
    objects_[rec.hash] = Commit{rec.path, std::move(content), rec.parent};
    journal_.push_back(std::move(rec));
  }
  for (const auto& [path, hist] : histories_) atomic_write(*root_ / "files" / path, objects_.at(hist.back()).content);
}

void Workspace::persist_locked(const CommitRecord& rec, std::string_view content) {
  atomic_write(*root_ / "objects" / rec.hash.str(), content);
  atomic_write(*root_ / "refs" / escape_ref(rec.path), rec.hash.str());
  atomic_write(*root_ / "files" / rec.path, content);
  nlohmann::json j{{"seq", rec.sequence},
                   {"path", rec.path},
                   {"hash", rec.hash.str()},
                   {"parent", rec.parent ? nlohmann::json(rec.parent->str()) : nlohmann::json(nullptr)}};
  std::ofstream out(*root_ / "log.jsonl", std::ios::app);
  out << j.dump() << '\n';
}

FileRecord Workspace::read(std::string_view path) const {
  require_path(path);
  std::shared_lock lock(mutex_);
  auto it = histories_.find(path);
  if (it == histories_.end()) throw Error(ErrorCode::NotFound, std::string(path));
  const auto& head = it->second.back();
  return FileRecord{std::string(path), objects_.at(head).content, head};
}

FileRecord Workspace::read_as(std::string_view caller, std::string_view path) {
  FileRecord rec = read(path);
  std::lock_guard lock(ticket_mutex_);
  tickets_[{std::string(caller), std::string(path)}] = rec.head;
  return rec;
}

CommitHash Workspace::commit_locked(std::string_view path, std::string_view content,
                                    const std::optional<CommitHash>& parent) {
  CommitHash hash = compute_commit_hash(path, content, parent);
  CommitRecord rec{journal_.size(), std::string(path), hash, parent};
  if (root_) persist_locked(rec, content);
  objects_[hash] = Commit{std::string(path), std::string(content), parent};
  histories_[std::string(path)].push_back(hash);
  journal_.push_back(rec);
  if (log_) {
    log_->append("workspace", "commit",
                 {{"seq", rec.sequence},
                  {"path", rec.path},
                  {"hash", hash.str()},
                  {"parent", parent ? nlohmann::json(parent->str()) : nlohmann::json(nullptr)}});
  }
  return hash;
}

ConflictReport Workspace::conflict_locked(std::string_view path, const std::optional<CommitHash>& base,
                                          std::string_view attempted) const {
  const auto& head = histories_.find(path)->second.back();
  ConflictReport report;
  report.path = std::string(path);
  report.base_hash = base;
  report.head_hash = head;
  if (base) report.base_content = objects_.at(*base).content;
  report.head_content = objects_.at(head).content;
  report.attempted_content = std::string(attempted);
  return report;
}

WriteResult Workspace::write(std::string_view path, std::string_view content,
                             const std::optional<CommitHash>& base_hash) {
  require_path(path);
  std::unique_lock lock(mutex_);
  auto it = histories_.find(path);
  if (it == histories_.end()) {
    if (base_hash) throw Error(ErrorCode::UnknownBaseHash, fmt::format("{} has no history", path));
    return commit_locked(path, content, std::nullopt);
  }
  const auto& hist = it->second;
  if (base_hash && std::find(hist.begin(), hist.end(), *base_hash) == hist.end())
    throw Error(ErrorCode::UnknownBaseHash, fmt::format("{} is not a commit of {}", base_hash->str(), path));
  if (base_hash && *base_hash == hist.back()) return commit_locked(path, content, hist.back());

  ConflictReport report = conflict_locked(path, base_hash, content);
  if (log_) {
    log_->append("workspace", "conflict",
                 {{"path", report.path},
                  {"base", base_hash ? nlohmann::json(base_hash->str()) : nlohmann::json(nullptr)},
                  {"head", report.head_hash.str()}});
  }
  return report;
}

WriteResult Workspace::write_as(std::string_view caller, std::string_view path, std::string_view content) {
  auto base = ticket(caller, path);
  auto result = write(path, content, base);
  if (auto* hash = std::get_if<CommitHash>(&result)) {
    std::lock_guard lock(ticket_mutex_);
    tickets_[{std::string(caller), std::string(path)}] = *hash;
  }
  return result;
}

CommitHash Workspace::resolve_conflict(const ConflictReport& report, std::string_view merged_content) {
  require_path(report.path);
  std::unique_lock lock(mutex_);
  auto it = histories_.find(report.path);
  if (it == histories_.end()) throw Error(ErrorCode::NotFound, report.path);
  const CommitHash head = it->second.back();
  if (head != report.head_hash) throw StaleReportError(conflict_locked(report.path, report.head_hash, merged_content));
  return commit_locked(report.path, merged_content, head);
}

std::vector<CommitHash> Workspace::history(std::string_view path) const {
  std::shared_lock lock(mutex_);
  auto it = histories_.find(path);
  if (it == histories_.end()) throw Error(ErrorCode::NotFound, std::string(path));
  return it->second;
}

std::string Workspace::content_at(const CommitHash& hash) const {
  std::shared_lock lock(mutex_);
  auto it = objects_.find(hash);
  if (it == objects_.end()) throw Error(ErrorCode::NotFound, hash.str());
  return it->second.content;
}

bool Workspace::exists(std::string_view path) const {
  std::shared_lock lock(mutex_);
  return histories_.find(path) != histories_.end();
}

std::vector<std::pair<std::string, CommitHash>> Workspace::heads() const {
  std::shared_lock lock(mutex_);
  std::vector<std::pair<std::string, CommitHash>> out;
  for (const auto& [path, hist] : histories_) out.emplace_back(path, hist.back());
  return out;
}

std::vector<CommitRecord> Workspace::journal() const {
  std::shared_lock lock(mutex_);
  return journal_;
}

std::optional<CommitHash> Workspace::ticket(std::string_view caller, std::string_view path) const {
  std::lock_guard lock(ticket_mutex_);
  auto it = tickets_.find({std::string(caller), std::string(path)});
  if (it == tickets_.end()) return std::nullopt;
  return it->second;
}

void Workspace::expire_tickets(std::string_view caller) {
  std::lock_guard lock(ticket_mutex_);
  std::erase_if(tickets_, [&](const auto& kv) { return kv.first.first == caller; });
}

}  // namespace megaagent
