#include "aepo/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace aepo {

EchoScore echo_overlap(std::span<const Token> reflection, std::span<const Token> reference, int n) {
  if (n < 1) throw std::invalid_argument("echo_overlap: n must be >= 1");
  const auto un = static_cast<std::size_t>(n);
  if (reflection.size() < un) throw std::invalid_argument("echo_overlap: reflection shorter than n");

  std::set<std::vector<Token>> grams;
  for (std::size_t i = 0; i + un <= reference.size(); ++i) {
    grams.emplace(reference.begin() + static_cast<std::ptrdiff_t>(i),
                  reference.begin() + static_cast<std::ptrdiff_t>(i + un));
  }
  const std::size_t positions = reflection.size() - un + 1;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < positions; ++i) {
    const std::vector<Token> g(reflection.begin() + static_cast<std::ptrdiff_t>(i),
                               reflection.begin() + static_cast<std::ptrdiff_t>(i + un));
    if (grams.contains(g)) ++hits;
  }
  EchoScore s;
  s.n = n;
  s.overlap = static_cast<double>(hits) / static_cast<double>(positions);
  s.novelty = 1.0 - s.overlap;
  return s;
}

std::vector<EchoSample> sample_echo(const PolicyParams& params, std::span<const TaskInstance> instances,
                                    double temperature, double top_p, int max_response_len, std::uint64_t seed,
                                    int n) {
  std::vector<EchoSample> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    Rng rng(derive_seed(seed, {stream::kEcho, static_cast<std::uint64_t>(inst.id)}));
    const Rollout r = generate(params, inst, temperature, top_p, max_response_len, rng);
    EchoSample s;
    s.prompt_id = inst.id;
    try {
      const StageSpans spans = segment_response(r.response_tokens);
      s.parse_ok = true;
      s.correct = correctness(spans, r.response_tokens, inst);
      const auto at = [&r](std::size_t i) { return r.response_tokens.begin() + static_cast<std::ptrdiff_t>(i); };
      const TokenSeq reflection(at(spans.reflection.begin), at(spans.reflection.end));
      TokenSeq reference = inst.question_tokens;
      reference.insert(reference.end(), at(spans.thinking.begin), at(spans.thinking.end));
      if (reflection.size() >= static_cast<std::size_t>(n)) s.score = echo_overlap(reflection, reference, n);
    } catch (const FormatError&) {
    }
    out.push_back(s);
  }
  return out;
}

std::string echo_to_jsonl(const std::vector<EchoSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["prompt_id"] = s.prompt_id;
    j["parse_ok"] = s.parse_ok;
    j["correct"] = s.correct;
    j["n"] = s.score ? nlohmann::ordered_json(s.score->n) : nlohmann::ordered_json();
    j["overlap"] = s.score ? nlohmann::ordered_json(s.score->overlap) : nlohmann::ordered_json();
    j["novelty"] = s.score ? nlohmann::ordered_json(s.score->novelty) : nlohmann::ordered_json();
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<EchoSample> echo_from_jsonl(std::string_view text) {
  std::vector<EchoSample> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    EchoSample s;
    s.prompt_id = j.at("prompt_id").get<std::int64_t>();
    s.parse_ok = j.at("parse_ok").get<bool>();
    s.correct = j.at("correct").get<bool>();
    if (!j.at("overlap").is_null()) {
      EchoScore e;
      e.n = j.at("n").get<int>();
      e.overlap = j.at("overlap").get<double>();
      e.novelty = j.at("novelty").get<double>();
      s.score = e;
    }
    out.push_back(s);
  }
  return out;
}

std::optional<double> final_accuracy(const RunLog& log) {
  for (auto it = log.rbegin(); it != log.rend(); ++it) {
    if (it->eval_acc) return it->eval_acc;
  }
  return std::nullopt;
}

std::optional<double> entropy_gap(const RunLog& log, double h_star) {
  std::vector<double> h;
  for (const auto& r : log) {
    if (r.h_r) h.push_back(*r.h_r);
  }
  if (h.empty()) return std::nullopt;
  const std::size_t tail = std::max<std::size_t>(1, (h.size() + 9) / 10);
  double s = 0.0;
  for (std::size_t i = h.size() - tail; i < h.size(); ++i) s += std::abs(h[i] - h_star);
  return s / static_cast<double>(tail);
}

std::optional<double> mean_novelty(const std::vector<EchoSample>& samples) {
  double s = 0.0;
  int n = 0;
  for (const auto& e : samples) {
    if (e.correct && e.score) {
      s += e.score->novelty;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

std::string compare_report(const std::vector<LabeledRun>& runs, double h_star) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  nlohmann::json report = nlohmann::json::object();
  for (const auto& run : runs) {
    report[run.label] = {{"final_acc", opt(final_accuracy(run.log))},
                         {"entropy_gap", opt(entropy_gap(run.log, h_star))},
                         {"mean_novelty", opt(mean_novelty(run.echo))}};
  }
  return report.dump(2) + "\n";
}

namespace {

std::string fmt(double x) {
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "%.12g", x);
  return buf.data();
}

std::string fixed(double x) {
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "%.2f", x);
  return buf.data();
}

void check_runs(const std::vector<LabeledRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("export_curves: no runs");
  for (const auto& r : runs) {
    if (r.log.empty()) throw std::invalid_argument("export_curves: run '" + r.label + "' has an empty log");
  }
}

const LabeledRun& longest(const std::vector<LabeledRun>& runs) {
  return *std::max_element(runs.begin(), runs.end(),
                           [](const LabeledRun& a, const LabeledRun& b) { return a.log.size() < b.log.size(); });
}

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::string curves_csv(const std::vector<LabeledRun>& runs) {
  check_runs(runs);
  std::string out = "step";
  for (const auto& r : runs) out += "," + r.label + "_reward," + r.label + "_h_r";
  out += "\n";
  const RunLog& steps = longest(runs).log;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    out += std::to_string(steps[k].step);
    for (const auto& r : runs) {
      out += ",";
      if (k < r.log.size()) out += fmt(r.log[k].mean_reward);
      out += ",";
      if (k < r.log.size() && r.log[k].h_r) out += fmt(*r.log[k].h_r);
    }
    out += "\n";
  }
  return out;
}

std::string curves_svg(const std::vector<LabeledRun>& runs) {
  check_runs(runs);
  constexpr double kPanelW = 420, kPanelH = 260, kMargin = 50, kTop = 40;
  const double width = 2 * kPanelW + 3 * kMargin;
  const double height = kTop + kPanelH + 2 * kMargin + 20.0 * static_cast<double>(runs.size());

  int max_step = 0;
  for (const auto& r : runs) max_step = std::max(max_step, r.log.back().step);
  max_step = std::max(max_step, 1);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width) << "\" height=\"" << fixed(height)
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  struct Panel {
    const char* title;
    bool entropy;
  };
  const std::array<Panel, 2> panels = {Panel{"mean reward", false}, Panel{"reflection entropy (nats)", true}};
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const double x0 = kMargin + static_cast<double>(p) * (kPanelW + kMargin);
    const double y0 = kTop;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& r : runs) {
      for (const auto& rec : r.log) {
        const std::optional<double> v = panels[p].entropy ? rec.h_r : std::optional<double>(rec.mean_reward);
        if (v) {
          lo = std::min(lo, *v);
          hi = std::max(hi, *v);
        }
      }
    }
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-9) hi = lo + 1.0;
    const auto sx = [&](double step) { return x0 + kPanelW * step / max_step; };
    const auto sy = [&](double v) { return y0 + kPanelH * (1.0 - (v - lo) / (hi - lo)); };

    svg << "<text x=\"" << fixed(x0) << "\" y=\"" << fixed(y0 - 10) << "\">" << panels[p].title << "</text>\n";
    svg << "<rect x=\"" << fixed(x0) << "\" y=\"" << fixed(y0) << "\" width=\"" << fixed(kPanelW) << "\" height=\""
        << fixed(kPanelH) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << fixed(x0 - 4) << "\" y=\"" << fixed(y0 + 10) << "\" text-anchor=\"end\">" << fmt(hi)
        << "</text>\n";
    svg << "<text x=\"" << fixed(x0 - 4) << "\" y=\"" << fixed(y0 + kPanelH) << "\" text-anchor=\"end\">" << fmt(lo)
        << "</text>\n";
    svg << "<text x=\"" << fixed(x0 + kPanelW) << "\" y=\"" << fixed(y0 + kPanelH + 16)
        << "\" text-anchor=\"end\">step " << max_step << "</text>\n";

    for (std::size_t k = 0; k < runs.size(); ++k) {
      std::string points;
      for (const auto& rec : runs[k].log) {
        const std::optional<double> v = panels[p].entropy ? rec.h_r : std::optional<double>(rec.mean_reward);
        if (!v) continue;
        if (!points.empty()) points += ' ';
        points += fixed(sx(rec.step)) + "," + fixed(sy(*v));
      }
      svg << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kColors[k % kColors.size()]
          << "\" points=\"" << points << "\"/>\n";
    }
  }
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const double y = kTop + kPanelH + kMargin + 20.0 * static_cast<double>(k);
    svg << "<line x1=\"" << fixed(kMargin) << "\" y1=\"" << fixed(y) << "\" x2=\"" << fixed(kMargin + 24)
        << "\" y2=\"" << fixed(y) << "\" stroke-width=\"3\" stroke=\"" << kColors[k % kColors.size()] << "\"/>\n";
    svg << "<text x=\"" << fixed(kMargin + 30) << "\" y=\"" << fixed(y + 4) << "\">" << xml_escape(runs[k].label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void export_curves(const std::vector<LabeledRun>& runs, const std::filesystem::path& out_prefix) {
  const std::string csv = curves_csv(runs);
  const std::string svg = curves_svg(runs);
  auto write = [](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
  };
  write(std::filesystem::path(out_prefix.string() + ".csv"), csv);
  write(std::filesystem::path(out_prefix.string() + ".svg"), svg);
}

}  // namespace aepo
