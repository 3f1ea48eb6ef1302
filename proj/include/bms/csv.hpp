#pragma once

// Tiny deterministic CSV emitter: header row, UTF-8, '.' decimal, shortest
// round-trip double formatting. Identical data yields identical bytes.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bms/errors.hpp"

namespace bms {

inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) body_ += ',';
            body_ += columns_[i];
        }
        body_ += '\n';
    }

    CsvWriter& cell(double v) { return cell_raw(format_double(v)); }
    CsvWriter& cell(std::int64_t v) { return cell_raw(std::to_string(v)); }
    CsvWriter& cell(int v) { return cell_raw(std::to_string(v)); }
    CsvWriter& cell(const std::string& v) { return cell_raw(v); }

    void end_row() {
        if (col_ != columns_.size())
            throw Error("csv row has " + std::to_string(col_) + " cells, expected " +
                        std::to_string(columns_.size()));
        body_ += '\n';
        col_ = 0;
    }

    const std::string& str() const { return body_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path);
        out << body_;
    }

  private:
    CsvWriter& cell_raw(const std::string& s) {
        if (col_) body_ += ',';
        body_ += s;
        ++col_;
        return *this;
    }

    std::vector<std::string> columns_;
    std::string body_;
    std::size_t col_ = 0;
};

}  // namespace bms
