#pragma once

#include <string>

namespace loopscope {

// Collects the analysis artifacts found in dir (build/verify reports,
// probability, attribution and perturbation CSVs/SVGs) into one static
// report.html. Throws when none of the expected files exist.
std::string build_report_html(const std::string& dir);

}  // namespace loopscope
