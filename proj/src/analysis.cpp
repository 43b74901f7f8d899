#include "vitp/analysis.hpp"

#include <cstdio>
#include <fstream>

namespace vitp {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace

std::string mad_csv(const MADReport& report) {
    std::string out = "layer,head,window_side_at_init,mad_px\n";
    for (const auto& row : report.rows)
        out += std::to_string(row.layer) + "," + std::to_string(row.head) + "," +
               std::to_string(row.window_side_at_init) + "," + fmt(row.mad_px) + "\n";
    return out;
}

std::string histogram_csv(const BiasHistogram& hist) {
    std::string out = "bin_left,bin_right,count\n";
    double width = (hist.hi - hist.lo) / static_cast<double>(hist.counts.size());
    for (size_t i = 0; i < hist.counts.size(); ++i) {
        double left = hist.lo + static_cast<double>(i) * width;
        double right = i + 1 == hist.counts.size() ? hist.hi : left + width;
        out += fmt(left) + "," + fmt(right) + "," + std::to_string(hist.counts[i]) + "\n";
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Error::Kind::missing, "cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(Error::Kind::missing, "write failed: " + path);
}

} // namespace vitp
