#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evsae/intervention.hpp"
#include "evsae/probe.hpp"
#include "evsae/ranking.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// Report emission: CSV tables plus SVG heatmaps and dose-response curves.
// Byte-deterministic: every float goes through fixed-precision formatting and
// no timestamps are written.
// ---------------------------------------------------------------------------

struct CampaignRow {
    std::string mode;
    int layer = 0;
    std::string ranking;
    int64_t feature = -1;  // -1 for aggregate rows
    double alpha = 0.0;
    double sr = 0.0;
    double delta_sr = 0.0;
    uint64_t seed = 0;
};

struct RankingTableRow {
    std::string strategy;
    int64_t feature_id = 0;
    double score = 0.0;  // NaN for random_alive (emitted empty)
    int rank = 0;
};

struct ReportBundle {
    ScoreMatrix matrix;                     // clusters x scored features
    std::vector<std::string> row_task;      // per matrix row
    std::vector<std::string> row_phase;     // per matrix row (may be empty strings)
    std::vector<int64_t> heatmap_features;  // columns to draw, in order
    std::vector<RankingTableRow> rankings;
    std::vector<std::pair<std::string, double>> overlaps;  // e.g. ("event_aligned/window_mean", 0.05)
    std::vector<CampaignRow> campaign;
    std::vector<DoseResponseCurve> curves;
    double baseline_sr = 0.0;
};

std::string render_heatmap_svg(const ScoreMatrix& matrix, const std::vector<std::string>& row_task,
                               const std::vector<std::string>& row_phase,
                               const std::vector<int64_t>& feature_cols);

std::string render_curves_svg(const std::vector<DoseResponseCurve>& curves);

// Writes heatmap.csv/svg, ranking_table.csv, overlap_table.csv, campaign.csv,
// campaign_table.txt, curves.csv/svg under out_dir; returns the paths written.
// SVGs are skipped when their data is empty.
std::vector<std::filesystem::path> emit_reports(const ReportBundle& bundle,
                                                const std::filesystem::path& out_dir);

}  // namespace evsae
