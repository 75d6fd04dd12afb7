#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace polarlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitResource = 4;

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// One block of whitespace-separated columns; blocks are separated by two
/// blank lines so gnuplot can address them with `index`.
struct PlotSeries {
    std::string label;
    std::vector<std::vector<double>> rows;
};

void write_plot_data(std::ostream& out, const std::vector<std::string>& columns,
                     const std::vector<PlotSeries>& series, const std::vector<std::string>& comments = {});

/// Default output directory: $POLARLAB_OUT or ./polarlab-out.
std::filesystem::path default_output_dir();

}  // namespace polarlab::cli
