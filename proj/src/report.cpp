#include "loopscope/report.hpp"

#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "loopscope/common.hpp"
#include "loopscope/manifest.hpp"

namespace loopscope {

namespace {

namespace fs = std::filesystem;

std::string escape_html(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string csv_to_table(const std::string& csv, std::size_t max_rows = 400) {
    std::istringstream in(csv);
    std::ostringstream out;
    out << "<table>\n";
    std::string line;
    bool header = true;
    std::size_t rows = 0;
    while (std::getline(in, line) && rows < max_rows) {
        if (line.empty()) continue;
        out << "<tr>";
        std::istringstream fields(line);
        std::string field;
        while (std::getline(fields, field, ',')) {
            out << (header ? "<th>" : "<td>") << escape_html(field) << (header ? "</th>" : "</td>");
        }
        out << "</tr>\n";
        header = false;
        ++rows;
    }
    out << "</table>\n";
    return out.str();
}

std::string json_to_list(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    std::ostringstream out;
    out << "<ul>\n";
    for (const auto& [key, value] : j.items()) {
        out << "<li><b>" << escape_html(key) << "</b>: " << escape_html(value.dump()) << "</li>\n";
    }
    out << "</ul>\n";
    return out.str();
}

}  // namespace

std::string build_report_html(const std::string& dir) {
    struct Section {
        const char* title;
        const char* json_file;
        const char* csv_file;
        const char* svg_file;
    };
    const std::vector<Section> sections = {
        {"Dataset build", "build_report.json", "cycle_hist.csv", nullptr},
        {"Dataset verification", "verify_report.json", nullptr, nullptr},
        {"Probability and entropy per cycle", nullptr, "prob_entropy.csv", "prob_entropy.svg"},
        {"Attention-head contrast trajectories", "attribution.json", "trajectories.csv",
         "trajectories.svg"},
        {"Top-p perturbation sweep", nullptr, "perturb.csv", "perturb.svg"},
    };

    std::ostringstream html;
    html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>loopscope report</title>\n"
         << "<style>body{font-family:sans-serif;max-width:1100px;margin:2em auto;padding:0 1em}"
         << "table{border-collapse:collapse;font-size:13px}td,th{border:1px solid #bbb;"
         << "padding:2px 8px;text-align:right}th{background:#eee}h2{border-bottom:1px solid #ccc;"
         << "padding-bottom:4px}</style></head><body>\n<h1>loopscope report</h1>\n";

    std::size_t rendered = 0;
    std::vector<std::string> expected;
    for (const Section& s : sections) {
        std::ostringstream body;
        bool any = false;
        if (s.json_file) {
            expected.push_back(s.json_file);
            const fs::path p = fs::path(dir) / s.json_file;
            if (fs::exists(p)) {
                body << json_to_list(read_text_file(p.string()));
                any = true;
            }
        }
        if (s.svg_file) {
            expected.push_back(s.svg_file);
            const fs::path p = fs::path(dir) / s.svg_file;
            if (fs::exists(p)) {
                body << read_text_file(p.string());
                any = true;
            }
        }
        if (s.csv_file) {
            expected.push_back(s.csv_file);
            const fs::path p = fs::path(dir) / s.csv_file;
            if (fs::exists(p)) {
                body << "<details><summary>" << s.csv_file << "</summary>"
                     << csv_to_table(read_text_file(p.string())) << "</details>\n";
                any = true;
            }
        }
        if (any) {
            html << "<h2>" << s.title << "</h2>\n" << body.str();
            ++rendered;
        }
    }

    if (rendered == 0) {
        std::string names;
        for (const auto& e : expected) names += (names.empty() ? "" : ", ") + e;
        throw std::runtime_error("no analysis artifacts in " + dir + "; expected one of: " + names);
    }
    html << "</body></html>\n";
    return html.str();
}

}  // namespace loopscope
