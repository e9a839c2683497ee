#pragma once

// Gzip-compressed CSV for per-path debug dumps.

#include <string>
#include <vector>

#include <zlib.h>

#include "esb/errors.hpp"

namespace esb {

class GzipCsvWriter {
 public:
  GzipCsvWriter(const std::string& path, const std::vector<std::string>& header) {
    file_ = gzopen(path.c_str(), "wb");
    if (!file_) throw ValidationError("cannot write " + path);
    row(header);
  }
  GzipCsvWriter(const GzipCsvWriter&) = delete;
  GzipCsvWriter& operator=(const GzipCsvWriter&) = delete;
  ~GzipCsvWriter() { close(); }

  void row(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += cells[i];
    }
    line += '\n';
    if (gzwrite(file_, line.data(), static_cast<unsigned>(line.size())) != static_cast<int>(line.size()))
      throw NumericalError("gzip write failed");
  }

  void close() {
    if (file_) gzclose(file_);
    file_ = nullptr;
  }

 private:
  gzFile file_ = nullptr;
};

// Whole decompressed content, for tests and tooling.
inline std::string read_gzip(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw ValidationError("cannot open " + path);
  std::string out;
  char buf[1 << 14];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  gzclose(f);
  if (n < 0) throw ValidationError(path + ": corrupt gzip stream");
  return out;
}

}  // namespace esb
