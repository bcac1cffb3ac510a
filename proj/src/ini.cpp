#include "fovea/ini.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fovea {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

IniFile IniFile::parse(const std::string& text) {
  IniFile ini;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("ini: malformed section at line " +
                                 std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("ini: expected key = value at line " +
                               std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("ini: empty key at line " +
                               std::to_string(lineno));
    ini.set(section.empty() ? key : section + "." + key, value);
  }
  return ini;
}

IniFile IniFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ini: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

bool IniFile::has(const std::string& key) const { return index_.count(key) > 0; }

std::string IniFile::get(const std::string& key) const {
  const auto it = index_.find(key);
  if (it == index_.end())
    throw std::runtime_error("ini: missing required key '" + key + "'");
  return entries_[it->second].second;
}

std::string IniFile::get(const std::string& key,
                         const std::string& fallback) const {
  const auto it = index_.find(key);
  return it == index_.end() ? fallback : entries_[it->second].second;
}

double IniFile::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  return std::stod(get(key));
}

int IniFile::get_int(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  return std::stoi(get(key));
}

long long IniFile::get_i64(const std::string& key, long long fallback) const {
  if (!has(key)) return fallback;
  return std::stoll(get(key));
}

bool IniFile::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::runtime_error("ini: key '" + key + "' is not a boolean: " + v);
}

std::vector<int> IniFile::get_int_list(const std::string& key,
                                       const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  std::istringstream in(get(key));
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

void IniFile::set(const std::string& key, const std::string& value) {
  const auto it = index_.find(key);
  if (it != index_.end()) {
    entries_[it->second].second = value;
    return;
  }
  index_[key] = entries_.size();
  entries_.emplace_back(key, value);
}

std::string IniFile::dump() const {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, value] : entries_) {
    const auto dot = key.rfind('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (section != current) {
      out << "[" << section << "]\n";
      current = section;
    }
    out << name << " = " << value << "\n";
  }
  return out.str();
}

void IniFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("ini: cannot write " + path.string());
  out << dump();
}

std::string digest_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace fovea
