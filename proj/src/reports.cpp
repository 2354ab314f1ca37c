#include "evsae/reports.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace evsae {

namespace {

constexpr int kCell = 18;        // heatmap cell size, px
constexpr int kStripWidth = 10;  // category side strip width
constexpr int kLabelWidth = 150;
constexpr int kHeaderHeight = 60;

const char* kPalette[8] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
                           "#59a14f", "#edc948", "#b07aa1", "#9c755f"};

std::string score_color(double value, double max_value) {
    const double t = max_value > 0.0 ? std::clamp(value / max_value, 0.0, 1.0) : 0.0;
    // white -> deep blue
    const int r = static_cast<int>(std::lround(255.0 - t * 221.0));
    const int g = static_cast<int>(std::lround(255.0 - t * 190.0));
    const int b = static_cast<int>(std::lround(255.0 - t * 103.0));
    return format("#%02x%02x%02x", r, g, b);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed: " + path.string());
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

}  // namespace

std::string render_heatmap_svg(const ScoreMatrix& matrix, const std::vector<std::string>& row_task,
                               const std::vector<std::string>& row_phase,
                               const std::vector<int64_t>& feature_cols) {
    const int rows = static_cast<int>(matrix.A.rows());
    const int cols = static_cast<int>(feature_cols.size());
    const int width = kLabelWidth + 2 * kStripWidth + cols * kCell + 20;
    const int height = kHeaderHeight + rows * kCell + 20;

    double max_value = 0.0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            max_value = std::max(max_value, matrix.A(r, feature_cols[static_cast<size_t>(c)]));

    std::map<std::string, int> task_color, phase_color;
    for (const auto& t : row_task)
        if (!t.empty()) task_color.emplace(t, static_cast<int>(task_color.size()));
    for (const auto& p : row_phase)
        if (!p.empty()) phase_color.emplace(p, static_cast<int>(phase_color.size()));

    std::string svg;
    svg += format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                  "viewBox=\"0 0 %d %d\">\n", width, height, width, height);
    svg += "<style>text { font-family: monospace; font-size: 10px; }</style>\n";

    // column headers: feature ids, rotated
    for (int c = 0; c < cols; ++c) {
        const int x = kLabelWidth + 2 * kStripWidth + c * kCell + kCell / 2;
        svg += format("<text x=\"%d\" y=\"%d\" transform=\"rotate(-60 %d %d)\">f%lld</text>\n", x,
                      kHeaderHeight - 6, x, kHeaderHeight - 6,
                      static_cast<long long>(feature_cols[static_cast<size_t>(c)]));
    }

    for (int r = 0; r < rows; ++r) {
        const int y = kHeaderHeight + r * kCell;
        const std::string task = r < static_cast<int>(row_task.size()) ? row_task[static_cast<size_t>(r)] : "";
        const std::string phase = r < static_cast<int>(row_phase.size()) ? row_phase[static_cast<size_t>(r)] : "";
        std::string label = matrix.cluster_ids[static_cast<size_t>(r)];
        if (!phase.empty()) label += " [" + phase + "]";
        svg += format("<text x=\"4\" y=\"%d\">%s</text>\n", y + kCell - 5, label.c_str());

        // side strips: task identity and phase
        if (!task.empty())
            svg += format("<rect class=\"strip-task\" x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                          "fill=\"%s\"/>\n", kLabelWidth, y, kStripWidth, kCell,
                          kPalette[task_color[task] % 8]);
        if (!phase.empty())
            svg += format("<rect class=\"strip-phase\" x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                          "fill=\"%s\"/>\n", kLabelWidth + kStripWidth, y, kStripWidth, kCell,
                          kPalette[phase_color[phase] % 8]);

        for (int c = 0; c < cols; ++c) {
            const double v = matrix.A(r, feature_cols[static_cast<size_t>(c)]);
            svg += format("<rect class=\"cell\" x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                          "fill=\"%s\"><title>%s f%lld: %.4f</title></rect>\n",
                          kLabelWidth + 2 * kStripWidth + c * kCell, y, kCell, kCell,
                          score_color(v, max_value).c_str(),
                          matrix.cluster_ids[static_cast<size_t>(r)].c_str(),
                          static_cast<long long>(feature_cols[static_cast<size_t>(c)]), v);
        }
    }
    svg += "</svg>\n";
    return svg;
}

std::string render_curves_svg(const std::vector<DoseResponseCurve>& curves) {
    const int plot_w = 420, plot_h = 260, margin = 50;
    const int width = plot_w + 2 * margin + 160, height = plot_h + 2 * margin;

    std::string svg;
    svg += format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                  "viewBox=\"0 0 %d %d\">\n", width, height, width, height);
    svg += "<style>text { font-family: monospace; font-size: 11px; }</style>\n";
    svg += format("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"none\" "
                  "stroke=\"#333\"/>\n", margin, margin, plot_w, plot_h);
    svg += format("<text x=\"%d\" y=\"%d\">alpha</text>\n", margin + plot_w / 2 - 15, height - 12);
    svg += format("<text x=\"10\" y=\"%d\" transform=\"rotate(-90 10 %d)\">SR</text>\n",
                  margin + plot_h / 2, margin + plot_h / 2);

    auto px = [&](double alpha) { return margin + alpha * plot_w; };
    auto py = [&](double sr) { return margin + (1.0 - sr) * plot_h; };

    for (double tick = 0.0; tick <= 1.0001; tick += 0.25) {
        svg += format("<text x=\"%.1f\" y=\"%d\">%.2f</text>\n", px(tick) - 10, margin + plot_h + 16, tick);
        svg += format("<text x=\"%d\" y=\"%.1f\">%.2f</text>\n", margin - 34, py(tick) + 4, tick);
    }

    int color = 0;
    for (const auto& curve : curves) {
        std::string points;
        for (size_t i = 0; i < curve.alphas.size(); ++i)
            points += format("%.1f,%.1f ", px(curve.alphas[i]), py(curve.sr_at_alpha[i]));
        svg += format("<polyline class=\"curve\" fill=\"none\" stroke=\"%s\" stroke-width=\"2\" "
                      "points=\"%s\"/>\n", kPalette[color % 8], points.c_str());
        svg += format("<text x=\"%d\" y=\"%d\" fill=\"%s\">layer %d %s</text>\n",
                      margin + plot_w + 10, margin + 14 + 16 * color, kPalette[color % 8],
                      curve.layer, curve.ranking_label.c_str());
        ++color;
    }
    svg += "</svg>\n";
    return svg;
}

std::vector<std::filesystem::path> emit_reports(const ReportBundle& bundle,
                                                const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    auto emit = [&](const std::string& name, const std::string& content) {
        const auto path = out_dir / name;
        write_text_file(path, content);
        written.push_back(path);
    };

    // heatmap CSV: one row per cluster, one column per scored feature
    {
        std::string csv = "cluster_id,task_id,phase";
        for (int64_t f : bundle.heatmap_features) csv += format(",f%lld", static_cast<long long>(f));
        csv += "\n";
        for (int64_t r = 0; r < bundle.matrix.A.rows(); ++r) {
            csv += csv_escape(bundle.matrix.cluster_ids[static_cast<size_t>(r)]) + "," +
                   csv_escape(r < static_cast<int64_t>(bundle.row_task.size())
                                  ? bundle.row_task[static_cast<size_t>(r)] : "") + "," +
                   csv_escape(r < static_cast<int64_t>(bundle.row_phase.size())
                                  ? bundle.row_phase[static_cast<size_t>(r)] : "");
            for (int64_t f : bundle.heatmap_features) csv += format(",%.6f", bundle.matrix.A(r, f));
            csv += "\n";
        }
        emit("heatmap.csv", csv);
        if (bundle.matrix.A.rows() > 0 && !bundle.heatmap_features.empty())
            emit("heatmap.svg", render_heatmap_svg(bundle.matrix, bundle.row_task,
                                                   bundle.row_phase, bundle.heatmap_features));
    }

    {
        std::string csv = "strategy,feature_id,score,rank\n";
        for (const auto& row : bundle.rankings) {
            csv += row.strategy + format(",%lld,", static_cast<long long>(row.feature_id));
            if (std::isfinite(row.score)) csv += format("%.9f", row.score);
            csv += format(",%d\n", row.rank);
        }
        emit("ranking_table.csv", csv);
    }

    {
        std::string csv = "pair,overlap_pct\n";
        for (const auto& [pair, overlap] : bundle.overlaps)
            csv += pair + format(",%.1f%%\n", 100.0 * overlap);
        emit("overlap_table.csv", csv);
    }

    {
        std::string csv = "mode,layer,ranking,feature,alpha,sr,delta_sr,seed\n";
        for (const auto& row : bundle.campaign) {
            csv += row.mode + format(",%d,", row.layer) + row.ranking + ",";
            if (row.feature >= 0) csv += format("%lld", static_cast<long long>(row.feature));
            csv += format(",%.4f,%.4f,%.4f,%llu\n", row.alpha, row.sr, row.delta_sr,
                          static_cast<unsigned long long>(row.seed));
        }
        emit("campaign.csv", csv);

        // human-readable table with "48.8% (-21.2)" cells, one row per
        // (mode, layer, ranking) aggregate
        std::string txt = format("baseline SR: %s\n", format_sr(bundle.baseline_sr).c_str());
        txt += "mode,layer,ranking,zero_out_sr\n";
        std::map<std::string, std::pair<double, int>> agg;
        for (const auto& row : bundle.campaign) {
            if (row.feature < 0) continue;
            auto& [sum, count] = agg[row.mode + "," + std::to_string(row.layer) + "," + row.ranking];
            sum += row.sr;
            ++count;
        }
        for (const auto& [key, sum_count] : agg) {
            const double sr = sum_count.first / sum_count.second;
            txt += key + "," + format_sr_with_delta(sr, 100.0 * (sr - bundle.baseline_sr)) + "\n";
        }
        emit("campaign_table.txt", txt);
    }

    {
        std::string csv = "layer,ranking,alpha,sr\n";
        for (const auto& curve : bundle.curves)
            for (size_t i = 0; i < curve.alphas.size(); ++i)
                csv += format("%d,%s,%.4f,%.4f\n", curve.layer, curve.ranking_label.c_str(),
                              curve.alphas[i], curve.sr_at_alpha[i]);
        emit("curves.csv", csv);
        if (!bundle.curves.empty()) emit("curves.svg", render_curves_svg(bundle.curves));
    }

    return written;
}

}  // namespace evsae
