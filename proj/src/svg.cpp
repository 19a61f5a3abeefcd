#include "fzilab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "fzilab/error.hpp"

namespace fzilab {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

struct Axis {
    bool log = false;
    double lo = 0.0;
    double hi = 1.0;

    double map(double v) const { return log ? std::log10(v) : v; }
};

Axis make_axis(const std::vector<double>& values, bool log) {
    Axis ax;
    ax.log = log;
    double lo = INFINITY;
    double hi = -INFINITY;
    for (double v : values) {
        lo = std::min(lo, ax.map(v));
        hi = std::max(hi, ax.map(v));
    }
    if (!std::isfinite(lo)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (log) {
        lo = std::floor(lo);
        hi = std::ceil(hi);
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    ax.lo = lo;
    ax.hi = hi;
    return ax;
}

std::vector<double> ticks(const Axis& ax) {
    std::vector<double> out;
    if (ax.log) {
        const int n = static_cast<int>(ax.hi - ax.lo);
        const int stride = std::max(1, n / 8);
        for (double t = ax.lo; t <= ax.hi + 1e-9; t += stride) out.push_back(t);
        return out;
    }
    for (int i = 0; i <= 4; ++i) out.push_back(ax.lo + (ax.hi - ax.lo) * i / 4.0);
    return out;
}

std::string tick_label(const Axis& ax, double t) {
    if (ax.log) return "1e" + fmt("%.0f", t);
    return fmt("%.4g", t);
}

bool showable(const Axis& ax, double v) { return std::isfinite(v) && (!ax.log || v > 0.0); }

} // namespace

std::string render_line_plot(const std::vector<PlotSeries>& series, const PlotOptions& options) {
    std::vector<double> xs, ys;
    Axis probe_x{options.log_x};
    Axis probe_y{options.log_y};
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (showable(probe_x, s.x[i]) && showable(probe_y, s.y[i])) {
                xs.push_back(s.x[i]);
                ys.push_back(s.y[i]);
            }
        }
    }
    const Axis ax = make_axis(xs, options.log_x);
    const Axis ay = make_axis(ys, options.log_y);
    const double left = 70, right = 150, top = 40, bottom = 50;
    const double pw = options.width - left - right;
    const double ph = options.height - top - bottom;
    auto px = [&](double v) { return left + (ax.map(v) - ax.lo) / (ax.hi - ax.lo) * pw; };
    auto py = [&](double v) { return top + ph - (ay.map(v) - ay.lo) / (ay.hi - ay.lo) * ph; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(options.width) + "\" height=\"" +
           std::to_string(options.height) + "\" viewBox=\"0 0 " + std::to_string(options.width) + " " +
           std::to_string(options.height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fmt("%.1f", left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" +
           xml_escape(options.title) + "</text>\n";
    svg += "<rect x=\"" + fmt("%.1f", left) + "\" y=\"" + fmt("%.1f", top) + "\" width=\"" + fmt("%.1f", pw) +
           "\" height=\"" + fmt("%.1f", ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
    svg += "<g class=\"x-axis\" font-size=\"10\" text-anchor=\"middle\">\n";
    for (double t : ticks(ax)) {
        const double x = left + (t - ax.lo) / (ax.hi - ax.lo) * pw;
        svg += "<line x1=\"" + fmt("%.2f", x) + "\" y1=\"" + fmt("%.2f", top + ph) + "\" x2=\"" + fmt("%.2f", x) +
               "\" y2=\"" + fmt("%.2f", top + ph + 4) + "\" stroke=\"black\"/>";
        svg += "<text x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", top + ph + 16) + "\">" + tick_label(ax, t) +
               "</text>\n";
    }
    svg += "</g>\n";
    svg += "<g class=\"y-axis\" data-scale=\"" + std::string(ay.log ? "log" : "linear") +
           "\" font-size=\"10\" text-anchor=\"end\">\n";
    for (double t : ticks(ay)) {
        const double y = top + ph - (t - ay.lo) / (ay.hi - ay.lo) * ph;
        svg += "<line x1=\"" + fmt("%.2f", left - 4) + "\" y1=\"" + fmt("%.2f", y) + "\" x2=\"" + fmt("%.2f", left) +
               "\" y2=\"" + fmt("%.2f", y) + "\" stroke=\"black\"/>";
        svg += "<text x=\"" + fmt("%.2f", left - 6) + "\" y=\"" + fmt("%.2f", y + 3) + "\">" + tick_label(ay, t) +
               "</text>\n";
    }
    svg += "</g>\n";
    svg += "<text x=\"" + fmt("%.1f", left + pw / 2) + "\" y=\"" + fmt("%.1f", options.height - 12.0) +
           "\" text-anchor=\"middle\" font-size=\"12\">" + xml_escape(options.x_label) + "</text>\n";
    svg += "<text x=\"16\" y=\"" + fmt("%.1f", top + ph / 2) + "\" text-anchor=\"middle\" font-size=\"12\" "
           "transform=\"rotate(-90 16 " + fmt("%.1f", top + ph / 2) + ")\">" + xml_escape(options.y_label) +
           "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % (sizeof kPalette / sizeof kPalette[0])];
        std::string points;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!showable(ax, s.x[i]) || !showable(ay, s.y[i])) continue;
            if (!points.empty()) points += ' ';
            points += fmt("%.2f", px(s.x[i])) + "," + fmt("%.2f", py(s.y[i]));
        }
        svg += "<polyline data-series=\"" + xml_escape(s.name) + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
        const double ly = top + 12 + 16.0 * si;
        svg += "<line x1=\"" + fmt("%.1f", left + pw + 10) + "\" y1=\"" + fmt("%.1f", ly) + "\" x2=\"" +
               fmt("%.1f", left + pw + 30) + "\" y2=\"" + fmt("%.1f", ly) + "\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>";
        svg += "<text x=\"" + fmt("%.1f", left + pw + 34) + "\" y=\"" + fmt("%.1f", ly + 4) +
               "\" font-size=\"11\">" + xml_escape(s.name) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

PlotKind plot_kind_from_string(const std::string& name) {
    if (name == "grad-norms") return PlotKind::GradNorms;
    if (name == "complexity") return PlotKind::Complexity;
    if (name == "contraction") return PlotKind::Contraction;
    throw ParameterError("unknown plot kind '" + name + "' (expected grad-norms, complexity or contraction)");
}

namespace {

double number(const std::string& field) {
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) throw ShapeError("non-numeric CSV field '" + field + "'");
        return v;
    } catch (const std::invalid_argument&) {
        throw ShapeError("non-numeric CSV field '" + field + "'");
    } catch (const std::out_of_range&) {
        throw ShapeError("CSV field out of range '" + field + "'");
    }
}

int require_column(const CsvTable& t, const char* name) {
    const int c = t.column(name);
    if (c < 0) throw ShapeError(std::string("CSV is missing column '") + name + "'");
    return c;
}

} // namespace

std::string plot_csv(const CsvTable& table, PlotKind kind) {
    if (table.header.empty() || table.rows.empty()) throw ShapeError("CSV has no data rows");
    std::vector<PlotSeries> series;
    PlotOptions opts;
    switch (kind) {
    case PlotKind::GradNorms: {
        const int step = require_column(table, "step");
        if (table.header.size() < 2) throw ShapeError("grad-norms CSV needs at least one series column");
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            if (static_cast<int>(c) == step) continue;
            PlotSeries s{table.header[c], {}, {}};
            for (const auto& row : table.rows) {
                s.x.push_back(number(row[step]));
                s.y.push_back(number(row[c]));
            }
            series.push_back(std::move(s));
        }
        opts.title = "Gradient norms";
        opts.x_label = "step";
        opts.y_label = "norm";
        break;
    }
    case PlotKind::Complexity: {
        const int kc = require_column(table, "target_kind");
        const int tc = require_column(table, "tau");
        const int sc = require_column(table, "steps");
        std::map<std::string, std::map<double, std::vector<double>>> groups;
        for (const auto& row : table.rows) groups[row[kc]][1.0 / number(row[tc])].push_back(number(row[sc]));
        for (const auto& [name, by_tau] : groups) {
            PlotSeries s{name, {}, {}};
            for (const auto& [inv_tau, steps] : by_tau) {
                double log_mean = 0.0;
                for (double v : steps) log_mean += std::log(v);
                s.x.push_back(inv_tau);
                s.y.push_back(std::exp(log_mean / steps.size()));
            }
            series.push_back(std::move(s));
        }
        opts.title = "Steps to tau-stationarity";
        opts.x_label = "1/tau";
        opts.y_label = "T";
        opts.log_x = true;
        break;
    }
    case PlotKind::Contraction: {
        const int pc = require_column(table, "pair");
        const int rc = require_column(table, "ratio");
        const int mc = require_column(table, "metric");
        const int gc = require_column(table, "gamma");
        std::map<std::string, PlotSeries> groups;
        for (const auto& row : table.rows) {
            const std::string name = row[mc] + " gamma=" + row[gc];
            auto& s = groups[name];
            s.name = name;
            s.x.push_back(number(row[pc]));
            s.y.push_back(number(row[rc]));
        }
        for (auto& [name, s] : groups) series.push_back(std::move(s));
        opts.title = "Contraction ratios";
        opts.x_label = "pair";
        opts.y_label = "ratio";
        break;
    }
    }
    return render_line_plot(series, opts);
}

} // namespace fzilab
