#include "utrcaf/io.hpp"

#include <unistd.h>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "utrcaf/error.hpp"

namespace utrcaf {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  long delay_ms = 0;
  if (const char* env = std::getenv("UTRCAF_DEBUG_WRITE_DELAY_MS")) delay_ms = std::atol(env);
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw InputError("cannot write '" + tmp.string() + "'");
      const std::size_t half = content.size() / 2;
      out.write(content.data(), static_cast<std::streamsize>(half));
      if (delay_ms > 0) {
        out.flush();
        std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      }
      out.write(content.data() + half, static_cast<std::streamsize>(content.size() - half));
      out.flush();
      if (!out) throw InputError("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

}  // namespace utrcaf
