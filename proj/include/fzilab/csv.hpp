#pragma once

#include <string>
#include <vector>

#include "fzilab/fitted.hpp"

namespace fzilab {

/// %.17g, so every binary64 value reads back exactly.
std::string format_double(double v);

/// Quotes a field when it contains a comma, quote, CR or LF (RFC 4180).
std::string csv_escape(const std::string& field);

/// Accumulates rows in memory and writes them with CRLF line endings.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);

    CsvWriter& row(const std::vector<std::string>& fields);
    std::string str() const;
    void save(const std::string& path) const;

private:
    std::size_t width_;
    std::string buffer_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by name, or -1.
    int column(const std::string& name) const;
};

/// RFC 4180 parser (quoted fields, doubled quotes, CRLF or LF).
CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::string& path);

/// step, loss, grad_norm_theta, grad_norm_state, avg_sq_grad.
std::string trace_csv(const ExperimentTrace& trace);

} // namespace fzilab
