#include "qdiag/io.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <unistd.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "qdiag/error.hpp"

namespace qdiag {

namespace fs = std::filesystem;

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownLabel: return "UnknownLabel";
    case ErrorCode::kNoBoxedAnswer: return "NoBoxedAnswer";
    case ErrorCode::kUnbalancedBraces: return "UnbalancedBraces";
    case ErrorCode::kDivisionByZero: return "DivisionByZero";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kStepOutOfRange: return "StepOutOfRange";
    case ErrorCode::kMissingGold: return "MissingGold";
    case ErrorCode::kDuplicateTranscript: return "DuplicateTranscript";
    case ErrorCode::kBaselineZero: return "BaselineZero";
    case ErrorCode::kUniverseMismatch: return "UniverseMismatch";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kJudgeUnavailable: return "JudgeUnavailable";
    case ErrorCode::kAuthError: return "AuthError";
    case ErrorCode::kParseFailure: return "ParseFailure";
    case ErrorCode::kDuplicateJudge: return "DuplicateJudge";
    case ErrorCode::kMissingBaseline: return "MissingBaseline";
    case ErrorCode::kNotReviewable: return "NotReviewable";
    case ErrorCode::kEmptyPool: return "EmptyPool";
    case ErrorCode::kAlreadyResolved: return "AlreadyResolved";
    case ErrorCode::kUnknownItem: return "UnknownItem";
    case ErrorCode::kMissingTranscript: return "MissingTranscript";
    case ErrorCode::kTargetExceedsPool: return "TargetExceedsPool";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kStageOrderViolation: return "StageOrderViolation";
    case ErrorCode::kStageFailed: return "StageFailed";
    case ErrorCode::kCorruptRun: return "CorruptRun";
    case ErrorCode::kRunLocked: return "RunLocked";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, fmt::format("cannot open {}", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += fmt::format(".tmp{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoFailure, fmt::format("cannot write {}", tmp.string()));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIoFailure, fmt::format("short write to {}", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(ErrorCode::kIoFailure, fmt::format("rename to {} failed: {}", path.string(), ec.message()));
  }
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, fmt::format("cannot open {}", path.string()));
  std::vector<Json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kIoFailure,
                  fmt::format("{}:{}: malformed JSON line: {}", path.string(), lineno, e.what()));
    }
  }
  return rows;
}

std::string to_jsonl(const std::vector<Json>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.dump(-1, ' ', false, Json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

void write_jsonl_atomic(const fs::path& path, const std::vector<Json>& rows) {
  write_file_atomic(path, to_jsonl(rows));
}

void append_jsonl(const fs::path& path, const Json& row) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::string line = row.dump(-1, ' ', false, Json::error_handler_t::replace) + "\n";
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error(ErrorCode::kIoFailure, fmt::format("cannot append to {}", path.string()));
  ssize_t n = ::write(fd, line.data(), line.size());
  ::fsync(fd);
  ::close(fd);
  if (n != static_cast<ssize_t>(line.size())) {
    throw Error(ErrorCode::kIoFailure, fmt::format("short append to {}", path.string()));
  }
}

Json read_json(const fs::path& path) {
  std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kIoFailure, fmt::format("{}: malformed JSON: {}", path.string(), e.what()));
  }
}

void write_json_atomic(const fs::path& path, const Json& doc) {
  write_file_atomic(path, doc.dump(2, ' ', false, Json::error_handler_t::replace) + "\n");
}

std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw Error(ErrorCode::kInvariantViolation, "sha256 failed");
  }
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string trim(std::string_view s) {
  constexpr std::string_view ws = " \t\n\r\f\v";
  auto start = s.find_first_not_of(ws);
  if (start == std::string_view::npos) return {};
  auto end = s.find_last_not_of(ws);
  return std::string(s.substr(start, end - start + 1));
}

}  // namespace qdiag
