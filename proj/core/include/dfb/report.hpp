#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dfb/sweep.hpp"

namespace dfb {

struct SvgFile {
    std::string condition;  // condition label, e.g. "id" or "noise-3"
    std::string content;

    std::string file_name() const { return "curves_" + condition + ".svg"; }
};

// One SVG per condition with two panels: bAcc of the non-deferred samples and
// the fraction of positives deferred, both against deferral rate. One polyline
// per (method, seed). Failed rows are skipped; absent bAcc values are omitted
// from the first panel. Throws EmptyReportError when there is nothing to plot.
std::vector<SvgFile> render_report(const std::vector<ResultRow>& rows);

// Writes render_report(rows) into `dir` and returns the written paths.
std::vector<std::filesystem::path> write_report(const std::vector<ResultRow>& rows, const std::filesystem::path& dir);

}  // namespace dfb
