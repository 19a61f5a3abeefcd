#pragma once

#include <string>
#include <vector>

#include "fzilab/csv.hpp"

namespace fzilab {

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = true;
    int width = 640;
    int height = 400;
};

/// One polyline per series. Points that cannot be shown on a log axis are dropped.
std::string render_line_plot(const std::vector<PlotSeries>& series, const PlotOptions& options);

enum class PlotKind { GradNorms, Complexity, Contraction };
PlotKind plot_kind_from_string(const std::string& name);

/// Expected columns:
///   grad-norms   step plus one or more numeric series columns
///   complexity   target_kind, tau, steps (log-log, mean steps per tau)
///   contraction  pair, ratio, metric, gamma (one series per metric and gamma)
/// Throws ShapeError when the table is empty or the columns do not match.
std::string plot_csv(const CsvTable& table, PlotKind kind);

} // namespace fzilab
