#include "dfb/report.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <tuple>

#include "dfb/error.hpp"
#include "dfb/text.hpp"

namespace dfb {

namespace {

constexpr double kWidth = 960, kHeight = 440;
constexpr double kPlotW = 360, kPlotH = 300;
constexpr double kTop = 50;
constexpr std::array<double, 2> kLeft{70, 540};

struct Axis {
    double x_min, x_max, y_min, y_max;
};

constexpr Axis kBaccAxis{0.0, 1.0, 0.4, 1.0};
constexpr Axis kPosAxis{0.0, 1.0, 0.0, 1.0};

const char* colour(const std::string& method) {
    static const std::map<std::string, const char*> palette{
        {"softmax", "#1f77b4"},    {"ensemble", "#ff7f0e"},          {"swag", "#2ca02c"},
        {"mc_dropout", "#d62728"}, {"bnn", "#9467bd"},               {"learned_one_stage", "#8c564b"},
        {"learned_two_stage", "#e377c2"}};
    auto it = palette.find(method);
    return it == palette.end() ? "#7f7f7f" : it->second;
}

std::string condition_label(const CurvePoint& p) {
    return p.condition == "id" ? p.condition : p.condition + "-" + std::to_string(p.level);
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

double px(const Axis& a, double left, double x) {
    return left + (std::clamp(x, a.x_min, a.x_max) - a.x_min) / (a.x_max - a.x_min) * kPlotW;
}
double py(const Axis& a, double y) {
    return kTop + kPlotH - (std::clamp(y, a.y_min, a.y_max) - a.y_min) / (a.y_max - a.y_min) * kPlotH;
}

using Key = std::tuple<std::string, std::uint64_t>;
using Series = std::map<Key, std::vector<const CurvePoint*>>;

void panel(std::string& out, const std::string& name, const std::string& y_label, const Axis& a, double left,
           const Series& series, bool bacc) {
    out += "<g class=\"panel\" data-panel=\"" + name + "\" data-x-min=\"" + format_double(a.x_min) +
           "\" data-x-max=\"" + format_double(a.x_max) + "\" data-y-min=\"" + format_double(a.y_min) +
           "\" data-y-max=\"" + format_double(a.y_max) + "\">\n";
    out += "<rect x=\"" + num(left) + "\" y=\"" + num(kTop) + "\" width=\"" + num(kPlotW) + "\" height=\"" +
           num(kPlotH) + "\" fill=\"none\" stroke=\"#000\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = a.x_min + (a.x_max - a.x_min) * i / 5.0;
        const double fy = a.y_min + (a.y_max - a.y_min) * i / 5.0;
        const double x = px(a, left, fx), y = py(a, fy);
        out += "<text x=\"" + num(x) + "\" y=\"" + num(kTop + kPlotH + 16) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + num(fx) + "</text>\n";
        out += "<text x=\"" + num(left - 6) + "\" y=\"" + num(y + 4) + "\" font-size=\"11\" text-anchor=\"end\">" +
               num(fy) + "</text>\n";
        out += "<line x1=\"" + num(left) + "\" y1=\"" + num(y) + "\" x2=\"" + num(left + kPlotW) + "\" y2=\"" +
               num(y) + "\" stroke=\"#ddd\"/>\n";
    }
    out += "<text x=\"" + num(left + kPlotW / 2) + "\" y=\"" + num(kTop + kPlotH + 34) +
           "\" font-size=\"12\" text-anchor=\"middle\">deferral rate</text>\n";
    out += "<text x=\"" + num(left + kPlotW / 2) + "\" y=\"" + num(kTop - 10) +
           "\" font-size=\"13\" text-anchor=\"middle\">" + y_label + "</text>\n";

    for (const auto& [key, pts] : series) {
        std::string coords;
        std::size_t n = 0;
        for (const CurvePoint* p : pts) {
            const std::optional<double> y = bacc ? p->bacc : std::optional<double>(p->positive_deferred_fraction);
            if (!y) continue;
            if (n++) coords += ' ';
            coords += num(px(a, left, p->deferral_rate)) + "," + num(py(a, *y));
        }
        if (n == 0) continue;
        const auto& [method, seed] = key;
        out += "<polyline data-method=\"" + method + "\" data-seed=\"" + std::to_string(seed) + "\" stroke=\"" +
               colour(method) + "\" fill=\"none\" stroke-width=\"1.2\" points=\"" + coords + "\"/>\n";
    }
    out += "</g>\n";
}

std::string render_one(const std::string& label, const Series& series) {
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
                      num(kHeight) + "\" data-condition=\"" + label + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
    out += "<text x=\"" + num(kWidth / 2) + "\" y=\"20\" font-size=\"15\" text-anchor=\"middle\">condition " + label +
           "</text>\n";
    panel(out, "bacc", "bAcc of non-deferred samples", kBaccAxis, kLeft[0], series, true);
    panel(out, "positives_deferred", "fraction of positives deferred", kPosAxis, kLeft[1], series, false);

    std::vector<std::string> methods;
    for (const auto& [key, pts] : series)
        if (std::find(methods.begin(), methods.end(), std::get<0>(key)) == methods.end())
            methods.push_back(std::get<0>(key));
    out += "<g class=\"legend\">\n";
    for (std::size_t i = 0; i < methods.size(); ++i) {
        const double x = 70 + 125.0 * static_cast<double>(i);
        const double y = kHeight - 30;
        out += "<line x1=\"" + num(x) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x + 18) + "\" y2=\"" + num(y) +
               "\" stroke=\"" + colour(methods[i]) + "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + num(x + 22) + "\" y=\"" + num(y + 4) + "\" font-size=\"11\">" + methods[i] +
               "</text>\n";
    }
    out += "</g>\n</svg>\n";
    return out;
}

}  // namespace

std::vector<SvgFile> render_report(const std::vector<ResultRow>& rows) {
    std::vector<std::string> order;
    std::map<std::string, Series> by_condition;
    for (const auto& r : rows) {
        if (r.status == "failed") continue;
        const auto label = condition_label(r.point);
        if (!by_condition.count(label)) order.push_back(label);
        by_condition[label][{r.point.method, r.point.seed}].push_back(&r.point);
    }
    if (order.empty()) throw EmptyReportError("no result rows to plot");

    std::vector<SvgFile> files;
    for (const auto& label : order) {
        auto& series = by_condition[label];
        for (auto& [key, pts] : series)
            std::stable_sort(pts.begin(), pts.end(),
                             [](const CurvePoint* a, const CurvePoint* b) { return a->deferral_rate < b->deferral_rate; });
        files.push_back({label, render_one(label, series)});
    }
    return files;
}

std::vector<std::filesystem::path> write_report(const std::vector<ResultRow>& rows, const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> written;
    for (const auto& f : render_report(rows)) {
        const auto path = dir / f.file_name();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        out << f.content;
        written.push_back(path);
    }
    return written;
}

}  // namespace dfb
