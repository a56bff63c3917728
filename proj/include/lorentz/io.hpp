#pragma once

// Output plumbing: FNV-1a digests, 17-significant-digit table writers, and
// the per-run manifest.  Every table carries the run digest in its first line
// and a column-name row, so a file can always be traced to the exact resolved
// configuration that produced it.  The digest covers the resolved config,
// seed, and tool version but not the worker count: parallelism never changes
// results, so files from different worker counts must stay byte-identical.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lorentz/config.hpp"

namespace lorentz {

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string format_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string config_digest(const RunConfig& cfg) {
    nlohmann::ordered_json j = resolved_json(cfg);
    j.erase("workers");
    return hex64(fnv1a64(j.dump() + "|" + kToolVersion));
}

struct OutputFile {
    std::string name;
    std::string digest;  // content digest of the written file
};

// Writes tables and summaries into one output directory and records every
// file with its content digest for the manifest.
class RunWriter {
  public:
    RunWriter(std::string dir, std::string run_digest)
        : dir_(std::move(dir)), run_digest_(std::move(run_digest)) {
        std::filesystem::create_directories(dir_);
    }

    const std::string& dir() const { return dir_; }
    const std::string& run_digest() const { return run_digest_; }
    const std::vector<OutputFile>& outputs() const { return outputs_; }

    // Delimited table: comma-separated for .csv, space-separated (gnuplot
    // ready) for .dat.  Cells arrive preformatted.
    void write_table(const std::string& name, const std::vector<std::string>& columns,
                     const std::vector<std::vector<std::string>>& rows) {
        const bool dat = name.size() > 4 && name.substr(name.size() - 4) == ".dat";
        const char* sep = dat ? " " : ",";
        std::string body = "# manifest_digest=" + run_digest_ + "\n";
        body += dat ? "# columns:" : "";
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (dat)
                body += " " + columns[i];
            else
                body += (i == 0 ? "" : sep) + columns[i];
        }
        body += "\n";
        for (const auto& row : rows) {
            if (row.size() != columns.size())
                throw std::logic_error("write_table: row width mismatch in " + name);
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i > 0) body += sep;
                body += row[i];
            }
            body += "\n";
        }
        write_text(name, body);
    }

    void write_text(const std::string& name, const std::string& content) {
        const std::filesystem::path path = std::filesystem::path(dir_) / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << content;
        out.close();
        outputs_.push_back({name, hex64(fnv1a64(content))});
    }

  private:
    std::string dir_;
    std::string run_digest_;
    std::vector<OutputFile> outputs_;
};

}  // namespace lorentz
