#include "steerbench/bench/report.hpp"

#include "steerbench/bench/sweep.hpp"
#include "steerbench/errors.hpp"
#include "steerbench/intervene.hpp"
#include "steerbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace steerbench::bench {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int precision = 6) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

std::string fmt_opt(const std::optional<double> &v) { return v ? fmt(*v) : std::string(); }

std::string xml_escape(const std::string &s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

const char *kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

// Plot frame with linear axes; maps data to pixels.
struct Frame {
    double x0, x1, y0, y1;
    int width = 640, height = 420, left = 60, right = 150, top = 30, bottom = 50;

    double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }

    std::string open(const std::string &title, const std::string &xlabel, const std::string &ylabel) const {
        std::ostringstream os;
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
           << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
           << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
           << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(title)
           << "</text>\n";
        const double bx = px(x0), by = py(y0), tx = px(x1), ty = py(y1);
        os << "<line x1=\"" << bx << "\" y1=\"" << by << "\" x2=\"" << tx << "\" y2=\"" << by
           << "\" stroke=\"black\"/>\n"
           << "<line x1=\"" << bx << "\" y1=\"" << by << "\" x2=\"" << bx << "\" y2=\"" << ty
           << "\" stroke=\"black\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
            os << "<text x=\"" << px(xv) << "\" y=\"" << by + 15 << "\" text-anchor=\"middle\">" << fmt(xv, 3)
               << "</text>\n"
               << "<text x=\"" << bx - 5 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv, 3)
               << "</text>\n";
        }
        os << "<text x=\"" << (bx + tx) / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
           << xml_escape(xlabel) << "</text>\n"
           << "<text x=\"14\" y=\"" << (by + ty) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
           << (by + ty) / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
        return os.str();
    }

    std::string legend(int index, const std::string &label, const std::string &color) const {
        std::ostringstream os;
        const int x = width - right + 15, y = top + 10 + 16 * index;
        os << "<rect x=\"" << x << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n"
           << "<text x=\"" << x + 15 << "\" y=\"" << y + 1 << "\">" << xml_escape(label) << "</text>\n";
        return os.str();
    }
};

double mean_of(const std::vector<double> &v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void write_text(const fs::path &path, const std::string &text, ReportFiles &files) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write " + path.string());
    out << text;
    files.written.push_back(path);
}

} // namespace

std::string csv_escape(const std::string &field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<CurveBin> distance_curve(const std::vector<RunRecord> &records, const std::string &method, int bins) {
    require(bins >= 1, "distance_curve: bins must be positive");
    std::vector<const RunRecord *> rs;
    for (const auto &r : records)
        if (r.method == method) rs.push_back(&r);
    if (rs.empty()) return {};
    double lo = rs.front()->edit_distance, hi = lo;
    for (const auto *r : rs) {
        lo = std::min(lo, r->edit_distance);
        hi = std::max(hi, r->edit_distance);
    }
    const double width = hi > lo ? (hi - lo) / bins : 0.0;
    std::vector<CurveBin> out(static_cast<std::size_t>(width > 0.0 ? bins : 1));
    for (std::size_t b = 0; b < out.size(); ++b) {
        out[b].method = method;
        out[b].lo = lo + width * static_cast<double>(b);
        out[b].hi = width > 0.0 ? lo + width * static_cast<double>(b + 1) : hi;
    }
    std::vector<int> hits(out.size(), 0);
    for (const auto *r : rs) {
        std::size_t b = 0;
        if (width > 0.0)
            b = std::min(out.size() - 1, static_cast<std::size_t>((r->edit_distance - lo) / width));
        ++out[b].runs;
        hits[b] += r->success ? 1 : 0;
    }
    for (std::size_t b = 0; b < out.size(); ++b)
        out[b].success_rate = out[b].runs > 0 ? static_cast<double>(hits[b]) / out[b].runs : 0.0;
    return out;
}

std::vector<AlphaMean> alpha_means(const std::vector<RunRecord> &records, bool per_topic) {
    std::map<std::tuple<std::string, std::string, double>, std::vector<const RunRecord *>> groups;
    for (const auto &r : records) groups[{r.method, per_topic ? r.topic : "*", r.alpha}].push_back(&r);
    std::vector<AlphaMean> out;
    for (const auto &[key, rs] : groups) {
        AlphaMean a;
        std::tie(a.method, a.topic, a.alpha) = key;
        a.runs = static_cast<int>(rs.size());
        std::vector<double> coh, prob;
        double succ = 0.0, dist = 0.0;
        for (const auto *r : rs) {
            succ += r->success ? 1.0 : 0.0;
            dist += r->edit_distance;
            if (r->coherence) coh.push_back(*r->coherence);
            if (r->token_probability) prob.push_back(*r->token_probability);
        }
        a.success_rate = succ / a.runs;
        a.mean_edit_distance = dist / a.runs;
        if (!coh.empty()) a.mean_coherence = mean_of(coh);
        if (!prob.empty()) a.mean_token_probability = mean_of(prob);
        out.push_back(std::move(a));
    }
    return out;
}

std::optional<Band> clean_coherence_band(const std::vector<RunRecord> &records) {
    std::map<std::string, double> per_prompt;
    for (const auto &r : records)
        if (r.clean_coherence) per_prompt.emplace(r.prompt_id, *r.clean_coherence);
    if (per_prompt.empty()) return std::nullopt;
    Band b;
    b.n = static_cast<int>(per_prompt.size());
    for (const auto &[id, v] : per_prompt) b.mean += v;
    b.mean /= b.n;
    if (b.n > 1) {
        double ss = 0.0;
        for (const auto &[id, v] : per_prompt) ss += (v - b.mean) * (v - b.mean);
        b.sd = std::sqrt(ss / (b.n - 1));
    }
    return b;
}

std::optional<SimilarityTable> similarity_from_records(const std::vector<RunRecord> &records) {
    std::map<std::pair<std::string, std::string>, std::vector<codec::Vector>> dirs;
    for (const auto &r : records) {
        if (r.edit_direction.empty()) continue;
        codec::Vector v(static_cast<Eigen::Index>(r.edit_direction.size()));
        for (std::size_t i = 0; i < r.edit_direction.size(); ++i)
            v[static_cast<Eigen::Index>(i)] = r.edit_direction[i];
        dirs[{r.method, r.topic}].push_back(std::move(v));
    }
    std::map<std::string, std::map<std::string, codec::Vector>> means;
    for (const auto &[key, vs] : dirs) {
        try {
            means[key.first][key.second] = intervene::mean_edit_direction(std::span<const codec::Vector>(vs));
        } catch (const DegenerateInputError &) {
        }
    }
    if (means.size() < 2) return std::nullopt;
    SimilarityTable t;
    for (const auto &[m, _] : means) t.methods.push_back(m);
    t.cosine = metrics::direction_similarity(means, t.methods);
    return t;
}

std::string curves_svg(const std::vector<CurveBin> &bins) {
    std::vector<std::string> methods;
    double x1 = 0.0;
    for (const auto &b : bins) {
        if (std::find(methods.begin(), methods.end(), b.method) == methods.end()) methods.push_back(b.method);
        x1 = std::max(x1, b.hi);
    }
    Frame f{0.0, x1 > 0.0 ? x1 : 1.0, 0.0, 1.0};
    std::ostringstream os;
    os << f.open("Success rate vs. normalized edit distance", "edit distance ||x' - x|| / ||x||", "success rate");
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        const std::string color = kPalette[mi % 8];
        std::ostringstream pts;
        for (const auto &b : bins) {
            if (b.method != methods[mi] || b.runs == 0) continue;
            const double cx = f.px(0.5 * (b.lo + b.hi)), cy = f.py(b.success_rate);
            pts << cx << ',' << cy << ' ';
            os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str()
           << "\"/>\n"
           << f.legend(static_cast<int>(mi), methods[mi], color);
    }
    os << "</svg>\n";
    return os.str();
}

std::string pareto_svg(const std::vector<AlphaMean> &points, const std::optional<Band> &band) {
    double y0 = 1.0, y1 = 10.0;
    for (const auto &p : points)
        if (p.mean_coherence) {
            y0 = std::min(y0, *p.mean_coherence);
            y1 = std::max(y1, *p.mean_coherence);
        }
    Frame f{0.0, 1.0, y0, y1};
    std::ostringstream os;
    os << f.open("Coherence vs. success rate", "success rate", "coherence");
    if (band) {
        const double x_a = f.px(0.0), x_b = f.px(1.0);
        auto line = [&](const char *cls, double v, const char *dash) {
            os << "<line class=\"" << cls << "\" data-value=\"" << fmt(v, 10) << "\" x1=\"" << x_a << "\" y1=\""
               << f.py(v) << "\" x2=\"" << x_b << "\" y2=\"" << f.py(v) << "\" stroke=\"gray\"" << dash << "/>\n";
        };
        line("clean-mean", band->mean, "");
        line("clean-lower", band->mean - band->sd, " stroke-dasharray=\"5,4\"");
        line("clean-upper", band->mean + band->sd, " stroke-dasharray=\"5,4\"");
    }
    std::vector<std::string> methods;
    for (const auto &p : points)
        if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        const std::string color = kPalette[mi % 8];
        for (const auto &p : points) {
            if (p.method != methods[mi] || !p.mean_coherence) continue;
            os << "<circle cx=\"" << f.px(p.success_rate) << "\" cy=\"" << f.py(*p.mean_coherence)
               << "\" r=\"4\" fill=\"" << color << "\"><title>" << xml_escape(p.method) << " alpha=" << fmt(p.alpha)
               << "</title></circle>\n";
        }
        os << f.legend(static_cast<int>(mi), methods[mi], color);
    }
    os << "</svg>\n";
    return os.str();
}

std::string heatmap_svg(const SimilarityTable &table) {
    const int n = static_cast<int>(table.methods.size());
    const int cell = 56, left = 110, top = 40;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + cell * n + 20 << "\" height=\""
       << top + cell * n + 20 << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"10\" y=\"18\" font-size=\"13\">Edit-direction cosine similarity</text>\n";
    for (int i = 0; i < n; ++i) {
        os << "<text x=\"" << left - 6 << "\" y=\"" << top + cell * i + cell / 2 + 4 << "\" text-anchor=\"end\">"
           << xml_escape(table.methods[static_cast<std::size_t>(i)]) << "</text>\n";
        for (int j = 0; j < n; ++j) {
            const double v = table.cosine(i, j);
            // Diverging scale: blue (-1), white (0), red (+1).
            const double t = std::isfinite(v) ? std::clamp(v, -1.0, 1.0) : 0.0;
            const int r = t >= 0 ? 255 : static_cast<int>(255 * (1 + t));
            const int b = t <= 0 ? 255 : static_cast<int>(255 * (1 - t));
            const int g = static_cast<int>(255 * (1 - std::abs(t)));
            os << "<rect x=\"" << left + cell * j << "\" y=\"" << top + cell * i << "\" width=\"" << cell
               << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ',' << g << ',' << b
               << ")\" stroke=\"white\"/>\n"
               << "<text x=\"" << left + cell * j + cell / 2 << "\" y=\"" << top + cell * i + cell / 2 + 4
               << "\" text-anchor=\"middle\">" << fmt(v, 2) << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

ReportFiles emit_report(const std::vector<RunRecord> &records, const fs::path &out_dir) {
    require(!records.empty(), "emit_report: no records");
    fs::create_directories(out_dir);
    ReportFiles files;

    {
        std::ostringstream os;
        os << "run_id,model_id,prompt_id,topic,method,layer,alpha,edit_distance,success,clean_success,"
              "token_probability,coherence,clean_coherence,perplexity,grammar_errors,flags\n";
        for (const auto &r : records) {
            std::string flags;
            for (const auto &fl : r.flags) flags += (flags.empty() ? "" : ";") + fl;
            os << csv_escape(r.run_id) << ',' << csv_escape(r.model_id) << ',' << csv_escape(r.prompt_id) << ','
               << csv_escape(r.topic) << ',' << r.method << ',' << r.layer << ',' << fmt(r.alpha) << ','
               << fmt(r.edit_distance) << ',' << (r.success ? 1 : 0) << ',' << (r.clean_success ? 1 : 0) << ','
               << fmt_opt(r.token_probability) << ',' << fmt_opt(r.coherence) << ',' << fmt_opt(r.clean_coherence)
               << ',' << fmt_opt(r.perplexity) << ',' << (r.grammar_errors ? std::to_string(*r.grammar_errors) : "")
               << ',' << csv_escape(flags) << '\n';
        }
        write_text(out_dir / "records.csv", os.str(), files);
    }

    auto alpha_csv = [&](const std::vector<AlphaMean> &rows, const char *name) {
        std::ostringstream os;
        os << "method,topic,alpha,runs,success_rate,mean_edit_distance,mean_coherence,mean_token_probability\n";
        for (const auto &a : rows)
            os << a.method << ',' << csv_escape(a.topic) << ',' << fmt(a.alpha) << ',' << a.runs << ','
               << fmt(a.success_rate) << ',' << fmt(a.mean_edit_distance) << ',' << fmt_opt(a.mean_coherence) << ','
               << fmt_opt(a.mean_token_probability) << '\n';
        write_text(out_dir / name, os.str(), files);
    };
    alpha_csv(alpha_means(records, true), "summary.csv");
    const auto pooled = alpha_means(records, false);
    alpha_csv(pooled, "alpha_means.csv");

    std::vector<CurveBin> all_bins;
    std::set<std::string> methods;
    for (const auto &r : records) methods.insert(r.method);
    for (const auto &m : methods) {
        auto bins = distance_curve(records, m, 10);
        all_bins.insert(all_bins.end(), bins.begin(), bins.end());
    }
    {
        std::ostringstream os;
        os << "method,bin_lo,bin_hi,runs,success_rate\n";
        for (const auto &b : all_bins)
            os << b.method << ',' << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.runs << ',' << fmt(b.success_rate)
               << '\n';
        write_text(out_dir / "curves.csv", os.str(), files);
        write_text(out_dir / "curves.svg", curves_svg(all_bins), files);
    }

    const auto band = clean_coherence_band(records);
    {
        std::ostringstream os;
        os << "method,alpha,success_rate,mean_coherence\n";
        for (const auto &a : pooled)
            os << a.method << ',' << fmt(a.alpha) << ',' << fmt(a.success_rate) << ',' << fmt_opt(a.mean_coherence)
               << '\n';
        if (band)
            os << "# clean_coherence mean=" << fmt(band->mean, 10) << " sd=" << fmt(band->sd, 10)
               << " n=" << band->n << '\n';
        write_text(out_dir / "pareto.csv", os.str(), files);
        write_text(out_dir / "pareto.svg", pareto_svg(pooled, band), files);
    }

    if (const auto sim = similarity_from_records(records)) {
        std::ostringstream os;
        os << "method";
        for (const auto &m : sim->methods) os << ',' << m;
        os << '\n';
        for (std::size_t i = 0; i < sim->methods.size(); ++i) {
            os << sim->methods[i];
            for (std::size_t j = 0; j < sim->methods.size(); ++j)
                os << ',' << fmt(sim->cosine(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            os << '\n';
        }
        write_text(out_dir / "cosine.csv", os.str(), files);
        write_text(out_dir / "cosine.svg", heatmap_svg(*sim), files);
    } else {
        files.notes.push_back("cosine heatmap skipped: fewer than two methods with edit directions");
    }

    {
        std::ostringstream os;
        os << "layer,method,runs,success_rate,clean_success_rate,mean_edit_distance,mean_coherence\n";
        for (const auto &row : summarize_layers(records))
            os << row.layer << ',' << row.method << ',' << row.runs << ',' << fmt(row.success_rate) << ','
               << fmt(row.clean_success_rate) << ',' << fmt(row.mean_edit_distance) << ','
               << fmt_opt(row.mean_coherence) << '\n';
        write_text(out_dir / "layers.csv", os.str(), files);
    }
    return files;
}

std::vector<RunRecord> collect_records(const fs::path &dir) {
    if (fs::is_regular_file(dir)) return read_records(dir);
    if (!fs::is_directory(dir)) throw LoadError("no records at " + dir.string());
    std::vector<fs::path> files;
    for (const auto &e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() == "records.jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<RunRecord> out;
    for (const auto &f : files) {
        auto rs = read_records(f);
        out.insert(out.end(), rs.begin(), rs.end());
    }
    return out;
}

} // namespace steerbench::bench
