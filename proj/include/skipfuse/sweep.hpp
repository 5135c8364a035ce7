#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skipfuse/bundle.hpp"
#include "skipfuse/config.hpp"
#include "skipfuse/evalkit.hpp"

namespace skipfuse::sweep {

/// Base configuration plus axes. In the grid file, "key = a | b | c" makes
/// an axis; a single value just sets the key for every cell.
struct Grid {
    RunConfig base;
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;

    std::size_t cell_count() const;
};

Grid parse_grid(const std::string& text, const std::string& origin);
Grid load_grid(const std::filesystem::path& path);

/// Cells in row-major order over the axes (last axis fastest).
std::vector<RunConfig> expand(const Grid& grid);

struct CellResult {
    std::vector<std::string> values;  // one per axis
    RunConfig config;
    bool ok = false;
    std::string error;
    eval::MiouResult miou;
    std::optional<eval::SplitMiou> split;
    double coverage = 0.0;
    double wall_time = 0.0;  // seconds; not part of the deterministic output
};

/// Scenes for a cell. The default synthesizes from the cell's synth.* keys;
/// a caller with on-disk data supplies (train, test) directly.
using DataSource = std::function<std::pair<std::vector<bundle::SceneBundle>, std::vector<bundle::SceneBundle>>(
    const RunConfig&)>;
DataSource synthetic_source();

/// Trains and evaluates every cell. Cells that differ only in evaluation
/// keys (views.eval_*, eval.*) share one trained model; finetune cells
/// with a distilled start share the pretraining. A failing cell records
/// its error and the sweep moves on.
std::vector<CellResult> run(const Grid& grid, const DataSource& source, std::ostream* progress);

/// Aligned text table: one column per axis, then mIoU and coverage.
std::string format_table(const Grid& grid, const std::vector<CellResult>& results);

/// One JSON object per line: axis values, full config echo, seed, status,
/// per-class IoU, mean, coverage, optional split, wall time.
std::string to_jsonl(const Grid& grid, const std::vector<CellResult>& results, bool include_wall_time = true);

}  // namespace skipfuse::sweep
