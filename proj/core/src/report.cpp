#include "rnascl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "rnascl/error.hpp"

namespace rnascl::report {

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

}  // namespace

void write_line_chart(const std::filesystem::path& path, const std::vector<Curve>& curves, const std::string& title,
                      const std::string& x_label, const std::string& y_label) {
    constexpr double W = 640, H = 420, left = 70, right = 160, top = 40, bottom = 60;
    const double pw = W - left - right, ph = H - top - bottom;
    double x_lo = 0.0, x_hi = 1.0;
    bool first = true;
    for (const auto& c : curves) {
        for (const auto& [x, y] : c.points) {
            if (first) x_lo = x_hi = x;
            x_lo = std::min(x_lo, x);
            x_hi = std::max(x_hi, x);
            first = false;
        }
    }
    if (x_hi <= x_lo) x_hi = x_lo + 1.0;
    // Accuracy axis is fixed to [0, 1].
    auto sx = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * pw; };
    auto sy = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * ph; };

    auto out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
        << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double y = i / 5.0;
        out << "<line x1=\"" << left - 4 << "\" y1=\"" << fmt("%.2f", sy(y)) << "\" x2=\"" << left + pw << "\" y2=\""
            << fmt("%.2f", sy(y)) << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << left - 8 << "\" y=\"" << fmt("%.2f", sy(y) + 4) << "\" text-anchor=\"end\">"
            << fmt("%.1f", y) << "</text>\n";
    }
    std::vector<double> xticks;
    for (const auto& c : curves)
        for (const auto& p : c.points) xticks.push_back(p.first);
    std::sort(xticks.begin(), xticks.end());
    xticks.erase(std::unique(xticks.begin(), xticks.end()), xticks.end());
    for (double x : xticks) {
        out << "<line x1=\"" << fmt("%.2f", sx(x)) << "\" y1=\"" << top + ph << "\" x2=\"" << fmt("%.2f", sx(x))
            << "\" y2=\"" << top + ph + 4 << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << fmt("%.2f", sx(x)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
            << fmt("%g", x) << "</text>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << escape(x_label)
        << "</text>\n";
    out << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << top + ph / 2 << ")\">" << escape(y_label) << "</text>\n";
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto* color = kPalette[i % std::size(kPalette)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : curves[i].points) out << fmt("%.2f", sx(x)) << ',' << fmt("%.2f", sy(y)) << ' ';
        out << "\"/>\n";
        for (const auto& [x, y] : curves[i].points) {
            out << "<circle cx=\"" << fmt("%.2f", sx(x)) << "\" cy=\"" << fmt("%.2f", sy(y)) << "\" r=\"3\" fill=\""
                << color << "\"/>\n";
        }
        const double ly = top + 10 + 18.0 * static_cast<double>(i);
        out << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 35 << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">" << escape(curves[i].label)
            << "</text>\n";
    }
    out << "</svg>\n";
}

std::vector<Curve> sweep_curves(const std::vector<attack::EvalRow>& rows) {
    std::map<std::string, Curve> by_model;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (r.attack != "pgd") continue;
        if (!by_model.count(r.model_id)) {
            order.push_back(r.model_id);
            by_model[r.model_id].label = r.model_id;
        }
        by_model[r.model_id].points.emplace_back(std::round(r.epsilon * 255.0 * 1e6) / 1e6, r.accuracy);
    }
    std::vector<Curve> curves;
    for (const auto& id : order) {
        auto c = by_model[id];
        std::stable_sort(c.points.begin(), c.points.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        curves.push_back(std::move(c));
    }
    return curves;
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<Curve>& curves) {
    auto out = open_out(path);
    out << "model_id,epsilon_255,accuracy\n";
    for (const auto& c : curves)
        for (const auto& [x, y] : c.points) out << c.label << ',' << fmt("%.17g", x) << ',' << fmt("%.17g", y) << '\n';
}

SummaryRow summarize(const std::vector<attack::EvalRow>& rows, const std::string& model_id, double pgd_epsilon,
                     std::size_t params, std::uint64_t macs) {
    SummaryRow s{model_id, -1, -1, -1, -1, params, macs};
    for (const auto& r : rows) {
        if (r.model_id != model_id) continue;
        if (r.attack == "clean") s.clean = r.accuracy;
        if (r.attack == "fgsm") s.fgsm = r.accuracy;
        if (r.attack == "mifgsm") s.mifgsm = r.accuracy;
        if (r.attack == "pgd" && std::abs(r.epsilon - pgd_epsilon) < 1e-12) s.pgd = r.accuracy;
    }
    if (s.clean < 0 || s.fgsm < 0 || s.pgd < 0 || s.mifgsm < 0) {
        throw MissingArtifactError("evaluation rows for '" + model_id + "' lack clean, fgsm, pgd or mifgsm entries");
    }
    return s;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
    auto out = open_out(path);
    out << "model_id,clean_acc,fgsm_acc,pgd_acc,mifgsm_acc,params,macs\n";
    for (const auto& r : rows) {
        out << r.model_id << ',' << fmt("%.6f", r.clean) << ',' << fmt("%.6f", r.fgsm) << ',' << fmt("%.6f", r.pgd)
            << ',' << fmt("%.6f", r.mifgsm) << ',' << r.params << ',' << r.macs << '\n';
    }
}

}  // namespace rnascl::report
