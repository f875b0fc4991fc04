#include "molgnn/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "molgnn/csv.hpp"
#include "molgnn/featurize.hpp"
#include "molgnn/random.hpp"

namespace molgnn {
namespace {

int resolve_target(const GnnModel& model, std::optional<int> target) {
  const int outputs = model.config().outputs;
  if (!target) {
    if (outputs != 1)
      throw Error(ErrorCode::MultiOutputUnsupported,
                  "model has " + std::to_string(outputs) + " outputs; choose a target index");
    return 0;
  }
  if (*target < 0 || *target >= outputs)
    throw Error(ErrorCode::MultiOutputUnsupported,
                "target " + std::to_string(*target) + " outside [0, " + std::to_string(outputs) + ")");
  return *target;
}

void require_single_graph(const GraphTensor& g) {
  if (g.num_graphs() != 1) throw Error(ErrorCode::ShapeMismatch, "attribution needs a single-molecule graph");
}

Var select_output(Tape& tape, Var output, int target) {
  Matrix pick = Matrix::Zero(output.cols(), 1);
  pick(target, 0) = 1.0;
  return matmul(output, tape.constant(pick));
}

std::string fmt(double v, int decimals = 2) {
  if (std::abs(v) < 0.5 * std::pow(10.0, -decimals)) v = 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string short_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string to_string(AttributionKind kind) { return kind == AttributionKind::Saliency ? "saliency" : "gradcam"; }

AttributionMap saliency(const GnnModel& model, const GraphTensor& g, std::optional<int> target) {
  require_single_graph(g);
  const int t = resolve_target(model, target);
  Tape tape;
  const ForwardResult fwd = model.forward(tape, g, false, true);
  const Var y = select_output(tape, fwd.output, t);
  tape.backward(y);
  AttributionMap map;
  map.kind = AttributionKind::Saliency;
  map.target = t;
  map.prediction = y.item();
  map.scores = tape.grad(fwd.input).cwiseAbs().rowwise().sum();
  return map;
}

AttributionMap gradcam(const GnnModel& model, const GraphTensor& g, std::optional<int> layer,
                       std::optional<int> target) {
  require_single_graph(g);
  const int layers = model.num_graph_layers();
  const int l = layer.value_or(layers - 1);
  if (l < 0 || l >= layers)
    throw Error(ErrorCode::BadLayerIndex,
                "graph layer " + std::to_string(l) + " outside [0, " + std::to_string(layers) + ")");
  const int t = resolve_target(model, target);
  Tape tape;
  const ForwardResult fwd = model.forward(tape, g, false, false);
  const Var y = select_output(tape, fwd.output, t);
  tape.backward(y);
  const Var h = fwd.node_embeddings[static_cast<std::size_t>(l)];
  const Matrix grad = tape.grad(h);
  AttributionMap map;
  map.kind = AttributionKind::Gradcam;
  map.target = t;
  map.prediction = y.item();
  if (grad.rows() == 0) {
    map.scores = Vector::Zero(0);
    return map;
  }
  const Matrix alpha = grad.colwise().mean();  // 1 x channels
  map.scores = h.value() * alpha.transpose();
  return map;
}

AttributionMap explain(const GnnModel& model, const std::string& smiles, AttributionKind kind,
                       std::optional<int> layer, std::optional<int> target) {
  const chem::Molecule mol = chem::parse_smiles(smiles);
  const GraphTensor g = encode_molecule(mol, model.config().features);
  AttributionMap map = kind == AttributionKind::Saliency ? saliency(model, g, target) : gradcam(model, g, layer, target);
  map.smiles = smiles;
  for (const auto& atom : mol.atoms) map.elements.push_back(atom.symbol);
  return map;
}

// ---------------------------------------------------------------- layout

std::vector<std::pair<double, double>> layout_2d(const chem::Molecule& mol, std::uint64_t seed) {
  const auto n = mol.atoms.size();
  std::vector<std::pair<double, double>> pos(n, {0.0, 0.0});
  if (n <= 1) return pos;

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0.0;
  std::vector<std::vector<bool>> exact(n, std::vector<bool>(n, false));
  for (const auto& b : mol.bonds) {
    d[b.src][b.dst] = d[b.dst][b.src] = 1.0;
    exact[b.src][b.dst] = exact[b.dst][b.src] = true;
  }
  for (const auto& ring : mol.rings) {
    const auto k = ring.size();
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        const std::size_t steps = std::min(b - a, k - (b - a));
        const double chord = std::sin(std::numbers::pi * static_cast<double>(steps) / static_cast<double>(k)) /
                             std::sin(std::numbers::pi / static_cast<double>(k));
        auto& entry = d[static_cast<std::size_t>(ring[a])][static_cast<std::size_t>(ring[b])];
        entry = std::min(entry, chord);
        exact[static_cast<std::size_t>(ring[a])][static_cast<std::size_t>(ring[b])] = true;
        exact[static_cast<std::size_t>(ring[b])][static_cast<std::size_t>(ring[a])] = true;
        d[static_cast<std::size_t>(ring[b])][static_cast<std::size_t>(ring[a])] = entry;
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  double far = 0.0;
  for (const auto& row : d)
    for (double v : row)
      if (std::isfinite(v)) far = std::max(far, v);
  for (auto& row : d)
    for (double& v : row)
      if (!std::isfinite(v)) v = far + 2.0;

  // Bonds and ring chords are exact targets; path-derived distances only
  // guide the overall shape, so they weigh less.
  std::vector<std::vector<double>> w(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) w[i][j] = (exact[i][j] ? 1.0 : 0.05) / (d[i][j] * d[i][j]);

  Rng rng = substream(seed, "layout");
  const double spread = std::sqrt(static_cast<double>(n));
  double best_stress = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, double>> trial(n);
  for (int restart = 0; restart < 6; ++restart) {
    for (auto& p : trial) p = {rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
    for (int sweep = 0; sweep < 400; ++sweep) {
      for (std::size_t i = 0; i < n; ++i) {
        double sx = 0.0, sy = 0.0, sw = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          const double dx = trial[i].first - trial[j].first;
          const double dy = trial[i].second - trial[j].second;
          const double dist = std::max(std::hypot(dx, dy), 1e-9);
          sx += w[i][j] * (trial[j].first + d[i][j] * dx / dist);
          sy += w[i][j] * (trial[j].second + d[i][j] * dy / dist);
          sw += w[i][j];
        }
        trial[i] = {sx / sw, sy / sw};
      }
    }
    double stress = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dist = std::hypot(trial[i].first - trial[j].first, trial[i].second - trial[j].second);
        stress += w[i][j] * (dist - d[i][j]) * (dist - d[i][j]);
      }
    if (stress < best_stress - 1e-12) {
      best_stress = stress;
      pos = trial;
    }
  }
  double cx = 0.0, cy = 0.0;
  for (const auto& p : pos) {
    cx += p.first;
    cy += p.second;
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  for (auto& p : pos) p = {p.first - cx, p.second - cy};
  return pos;
}

// ---------------------------------------------------------------- rendering

std::string diverging_color(double normalized) {
  const double t = std::clamp(normalized, -1.0, 1.0);
  // Positive toward green (26,150,65), negative toward purple (123,50,148).
  const double target[2][3] = {{123, 50, 148}, {26, 150, 65}};
  const double* end = t >= 0 ? target[1] : target[0];
  const double a = std::abs(t);
  char buf[8];
  int rgb[3];
  for (int k = 0; k < 3; ++k) rgb[k] = static_cast<int>(std::lround(255.0 + a * (end[k] - 255.0)));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

std::string render_svg(const AttributionMap& map, const SvgOptions& options) {
  if (map.smiles.empty()) throw Error(ErrorCode::ConfigError, "rendering needs the molecule's SMILES");
  const chem::Molecule mol = chem::parse_smiles(map.smiles);
  if (static_cast<Index>(mol.atoms.size()) != map.scores.size())
    throw Error(ErrorCode::ShapeMismatch, "score count differs from atom count");
  const auto coords = layout_2d(mol, options.seed);

  const double margin = 30.0;
  const double legend_height = 50.0;
  double minx = 0, maxx = 0, miny = 0, maxy = 0;
  for (const auto& [x, y] : coords) {
    minx = std::min(minx, x);
    maxx = std::max(maxx, x);
    miny = std::min(miny, y);
    maxy = std::max(maxy, y);
  }
  const double area_w = options.width - 2 * margin;
  const double area_h = options.height - 2 * margin - legend_height;
  double scale = 40.0;
  if (maxx - minx > 0) scale = std::min(scale, area_w / (maxx - minx));
  if (maxy - miny > 0) scale = std::min(scale, area_h / (maxy - miny));
  const double ox = margin + area_w / 2 - scale * (minx + maxx) / 2;
  const double oy = margin + area_h / 2 - scale * (miny + maxy) / 2;
  auto px = [&](std::size_t i) { return ox + scale * coords[i].first; };
  auto py = [&](std::size_t i) { return oy + scale * coords[i].second; };

  const double peak = map.scores.size() > 0 ? map.scores.cwiseAbs().maxCoeff() : 0.0;
  auto colour = [&](double s) { return diverging_color(peak > 0 ? s / peak : 0.0); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << options.width << "\" height=\""
      << options.height << "\" viewBox=\"0 0 " << options.width << ' ' << options.height << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << options.width << "\" height=\"" << options.height
      << "\" fill=\"#ffffff\"/>\n";

  svg << "<g class=\"bonds\" stroke=\"#333333\" stroke-width=\"2\">\n";
  for (const auto& b : mol.bonds) {
    const auto s = static_cast<std::size_t>(b.src), t = static_cast<std::size_t>(b.dst);
    const double x1 = px(s), y1 = py(s), x2 = px(t), y2 = py(t);
    const double len = std::max(std::hypot(x2 - x1, y2 - y1), 1e-9);
    const double nx = -(y2 - y1) / len, ny = (x2 - x1) / len;
    auto line = [&](double offset, bool dashed) {
      svg << "<line x1=\"" << fmt(x1 + nx * offset) << "\" y1=\"" << fmt(y1 + ny * offset) << "\" x2=\""
          << fmt(x2 + nx * offset) << "\" y2=\"" << fmt(y2 + ny * offset) << '"'
          << (dashed ? " stroke-dasharray=\"4 3\"" : "") << "/>\n";
    };
    switch (b.order) {
      case chem::BondOrder::Single: line(0, false); break;
      case chem::BondOrder::Double: line(-3, false); line(3, false); break;
      case chem::BondOrder::Triple: line(-4, false); line(0, false); line(4, false); break;
      case chem::BondOrder::Aromatic: {
        // The dashed line sits on the ring side of the bond.
        double side = 1.0;
        for (const auto& ring : mol.rings) {
          const bool has_s = std::find(ring.begin(), ring.end(), b.src) != ring.end();
          const bool has_t = std::find(ring.begin(), ring.end(), b.dst) != ring.end();
          if (!has_s || !has_t) continue;
          double rx = 0.0, ry = 0.0;
          for (int a : ring) {
            rx += px(static_cast<std::size_t>(a));
            ry += py(static_cast<std::size_t>(a));
          }
          rx /= static_cast<double>(ring.size());
          ry /= static_cast<double>(ring.size());
          side = (rx - (x1 + x2) / 2) * nx + (ry - (y1 + y2) / 2) * ny >= 0 ? 1.0 : -1.0;
          break;
        }
        line(0, false);
        line(5 * side, true);
        break;
      }
    }
  }
  svg << "</g>\n";

  svg << "<g class=\"atoms\" stroke=\"#333333\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
    const double s = map.scores(static_cast<Index>(i));
    svg << "<circle cx=\"" << fmt(px(i)) << "\" cy=\"" << fmt(py(i)) << "\" r=\"11\" fill=\"" << colour(s)
        << "\"><title>" << i << ' ' << mol.atoms[i].symbol << ' ' << short_number(s) << "</title></circle>\n";
    if (mol.atoms[i].symbol != "C" || mol.atoms.size() == 1)
      svg << "<text x=\"" << fmt(px(i)) << "\" y=\"" << fmt(py(i) + 4) << "\" text-anchor=\"middle\" stroke=\"none\""
          << " fill=\"#000000\">" << mol.atoms[i].symbol << "</text>\n";
  }
  svg << "</g>\n";

  const double bar_w = std::min(200.0, options.width - 2 * margin);
  const double bar_x = (options.width - bar_w) / 2;
  const double bar_y = options.height - margin - 14;
  svg << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"10\">\n"
      << "<defs><linearGradient id=\"score-scale\" x1=\"0\" y1=\"0\" x2=\"1\" y2=\"0\">"
      << "<stop offset=\"0\" stop-color=\"" << diverging_color(-1) << "\"/>"
      << "<stop offset=\"0.5\" stop-color=\"" << diverging_color(0) << "\"/>"
      << "<stop offset=\"1\" stop-color=\"" << diverging_color(1) << "\"/></linearGradient></defs>\n"
      << "<rect x=\"" << fmt(bar_x) << "\" y=\"" << fmt(bar_y) << "\" width=\"" << fmt(bar_w)
      << "\" height=\"10\" fill=\"url(#score-scale)\" stroke=\"#333333\" stroke-width=\"0.5\"/>\n"
      << "<text x=\"" << fmt(bar_x) << "\" y=\"" << fmt(bar_y + 22) << "\" text-anchor=\"start\">"
      << short_number(-peak) << "</text>\n"
      << "<text x=\"" << fmt(bar_x + bar_w / 2) << "\" y=\"" << fmt(bar_y + 22) << "\" text-anchor=\"middle\">0</text>\n"
      << "<text x=\"" << fmt(bar_x + bar_w) << "\" y=\"" << fmt(bar_y + 22) << "\" text-anchor=\"end\">"
      << short_number(peak) << "</text>\n"
      << "<text x=\"" << fmt(bar_x + bar_w / 2) << "\" y=\"" << fmt(bar_y - 6) << "\" text-anchor=\"middle\">"
      << to_string(map.kind) << " (prediction " << short_number(map.prediction) << ")</text>\n"
      << "</g>\n</svg>\n";
  return svg.str();
}

void write_attribution_csv(const std::filesystem::path& path, const AttributionMap& map) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_csv_row(out, {"atom_index", "element", "score"});
  for (Index i = 0; i < map.scores.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", map.scores(i));
    const std::string element =
        static_cast<std::size_t>(i) < map.elements.size() ? map.elements[static_cast<std::size_t>(i)] : "";
    write_csv_row(out, {std::to_string(i), element, buf});
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace molgnn
