#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace enes {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

// Flat key=value configuration with a fixed key set.
class RunConfig {
 public:
  RunConfig();  // built-in defaults

  static bool known(const std::string& key);
  static std::vector<std::string> keys();
  static std::string help(const std::string& key);

  // Text format: one `key = value` per line, `#` starts a comment. Unknown
  // keys and malformed lines throw UsageError.
  void merge_file(const std::string& path);
  void merge_text(const std::string& text, const std::string& origin = "config");
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  // FNV-1a over the sorted key=value lines, as 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

// Bad flags, unknown keys, missing files: exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace enes
