#ifndef RNASCL_REPORT_HPP
#define RNASCL_REPORT_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rnascl/attack.hpp"

namespace rnascl::report {

struct Curve {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (x, y), x ascending
};

/// Line chart with axes, ticks and a legend, written as plain SVG.
void write_line_chart(const std::filesystem::path& path, const std::vector<Curve>& curves, const std::string& title,
                      const std::string& x_label, const std::string& y_label);

/// PGD accuracy against ε (in /255 units) per model id, from evaluation rows.
std::vector<Curve> sweep_curves(const std::vector<attack::EvalRow>& rows);

/// model_id,epsilon_255,accuracy
void write_curves_csv(const std::filesystem::path& path, const std::vector<Curve>& curves);

struct SummaryRow {
    std::string model_id;
    double clean = 0.0;
    double fgsm = 0.0;
    double pgd = 0.0;
    double mifgsm = 0.0;
    std::size_t params = 0;
    std::uint64_t macs = 0;
};

/// Picks the clean, FGSM, MI-FGSM rows and the PGD row at `pgd_epsilon` for
/// one model. Throws if any of them is missing.
SummaryRow summarize(const std::vector<attack::EvalRow>& rows, const std::string& model_id, double pgd_epsilon,
                     std::size_t params, std::uint64_t macs);

/// model_id,clean_acc,fgsm_acc,pgd_acc,mifgsm_acc,params,macs
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);

}  // namespace rnascl::report

#endif  // RNASCL_REPORT_HPP
