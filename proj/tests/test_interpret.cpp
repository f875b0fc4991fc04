#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "molgnn/featurize.hpp"
#include "molgnn/interpret.hpp"
#include "test_support.hpp"

using namespace molgnn;
using namespace molgnn::testing;

namespace {

namespace fs = std::filesystem;

FeatureConfig features() { return FeatureConfig::from_names({"symbol", "degree", "aromatic"}, {"bond_type"}); }

ModelConfig linear_readout(const FeatureConfig& f, int outputs = 1) {
  ModelConfig cfg;
  cfg.features = f;
  cfg.layers = {LayerConfig::readout_layer(Aggregation::Sum), LayerConfig::dense(outputs, Activation::Identity)};
  cfg.outputs = outputs;
  return cfg;
}

ModelConfig gcn_head(const FeatureConfig& f, std::uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.features = f;
  cfg.layers = {LayerConfig::graph(LayerKind::Gcn, 6, Activation::Tanh), LayerConfig::graph(LayerKind::Gin, 5),
                LayerConfig::readout_layer(Aggregation::Sum), LayerConfig::dense(1, Activation::Identity)};
  cfg.seed = seed;
  return cfg;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) ++n;
  return n;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("saliency of a linear model is the weight norm for every atom") {
  const auto f = features();
  GnnModel model(linear_readout(f));
  Rng rng(1);
  const Matrix w = random_matrix(rng, f.atom_width(), 1);
  model.parameters().at("layer1.W") = w;
  const auto map = explain(model, "CC(=O)Nc1ccccc1", AttributionKind::Saliency);
  CHECK(map.scores.size() == 10);
  CHECK(map.elements[2] == "O");
  for (Index i = 0; i < map.scores.size(); ++i) CHECK(map.scores(i) == doctest::Approx(w.cwiseAbs().sum()).epsilon(1e-12));

  const GraphTensor g = encode_molecule("CC(=O)Nc1ccccc1", f);
  CHECK(map.prediction == doctest::Approx((g.node_feature * w).sum() + model.parameters().at("layer1.b")(0, 0)));
}

TEST_CASE("zero-weight model has zero attributions") {
  const auto f = features();
  GnnModel model(gcn_head(f));
  for (auto& [name, value] : model.parameters()) value.setZero();
  const auto sal = explain(model, "c1ccncc1O", AttributionKind::Saliency);
  CHECK(sal.scores.cwiseAbs().maxCoeff() == 0.0);
  const auto cam = explain(model, "c1ccncc1O", AttributionKind::Gradcam);
  CHECK(cam.scores.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attributions are permutation equivariant and saliency is non-negative") {
  const auto f = features();
  GnnModel model(gcn_head(f, 5));
  Rng rng(3);
  for (const char* smiles : {"CCO", "c1ccccc1C(=O)O", "CN1CCC(CC1)O", "O=C(N)c1ccncc1"}) {
    const GraphTensor g = encode_molecule(smiles, f);
    const auto perm = random_permutation(rng, static_cast<int>(g.num_nodes()));
    const GraphTensor p = permute_nodes(g, perm);
    const Vector s = saliency(model, g).scores;
    const Vector sp = saliency(model, p).scores;
    const Vector c = gradcam(model, g).scores;
    const Vector cp = gradcam(model, p).scores;
    CHECK(s.minCoeff() >= 0.0);
    for (Index i = 0; i < g.num_nodes(); ++i) {
      CHECK(sp(perm[i]) == doctest::Approx(s(i)).epsilon(1e-10));
      CHECK(cp(perm[i]) == doctest::Approx(c(i)).epsilon(1e-10));
    }
  }
}

TEST_CASE("gradcam analytic case: linear head over the last graph layer") {
  const auto f = features();
  GnnModel model(gcn_head(f, 9));
  Rng rng(4);
  const Matrix v = random_matrix(rng, 5, 1);
  model.parameters().at("layer3.W") = v;
  const GraphTensor g = encode_molecule("CC(=O)Oc1ccccc1C(=O)O", f);
  Tape tape;
  const Matrix h = model.forward(tape, g).node_embeddings[1].value();
  const Vector expected = h * v;
  const auto cam = gradcam(model, g, 1);
  REQUIRE(cam.scores.size() == expected.size());
  for (Index i = 0; i < expected.size(); ++i) CHECK(cam.scores(i) == doctest::Approx(expected(i)).epsilon(1e-12));
  CHECK(cam.scores.minCoeff() < 0.0);  // negative contributions survive

  // Layer 0 goes through the GIN layer; the attribution is still one score per atom.
  CHECK(gradcam(model, g, 0).scores.size() == g.num_nodes());
}

TEST_CASE("gradcam scales with the output and is additive over heads") {
  const auto f = features();
  const GraphTensor g = encode_molecule("Nc1ccc(cc1)S(=O)(=O)N", f);
  GnnModel base(gcn_head(f, 2));
  Rng rng(8);
  const Matrix v1 = random_matrix(rng, 5, 1), v2 = random_matrix(rng, 5, 1);
  GnnModel m1 = base, m2 = base, sum = base, scaled = base;
  m1.parameters().at("layer3.W") = v1;
  m2.parameters().at("layer3.W") = v2;
  sum.parameters().at("layer3.W") = v1 + v2;
  scaled.parameters().at("layer3.W") = 3.5 * v1;
  scaled.parameters().at("layer3.b") *= 3.5;
  const Vector a = gradcam(m1, g).scores, b = gradcam(m2, g).scores;
  const Vector ab = gradcam(sum, g).scores, a3 = gradcam(scaled, g).scores;
  for (Index i = 0; i < a.size(); ++i) {
    CHECK(ab(i) == doctest::Approx(a(i) + b(i)).epsilon(1e-10));
    CHECK(a3(i) == doctest::Approx(3.5 * a(i)).epsilon(1e-10));
  }
  std::vector<Index> r1(static_cast<std::size_t>(a.size())), r3 = r1;
  std::iota(r1.begin(), r1.end(), Index{0});
  std::iota(r3.begin(), r3.end(), Index{0});
  std::sort(r1.begin(), r1.end(), [&](Index x, Index y) { return a(x) < a(y); });
  std::sort(r3.begin(), r3.end(), [&](Index x, Index y) { return a3(x) < a3(y); });
  CHECK(r1 == r3);
}

TEST_CASE("attribution errors") {
  const auto f = features();
  const GraphTensor g = encode_molecule("CCO", f);
  GnnModel model(gcn_head(f));
  CHECK_THROWS_AS(gradcam(model, g, 2), Error);
  try {
    gradcam(model, g, -1);
    FAIL("expected BadLayerIndex");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadLayerIndex);
  }
  GnnModel flat(linear_readout(f));
  try {
    gradcam(flat, g);
    FAIL("expected BadLayerIndex");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadLayerIndex);
  }

  GnnModel multi(linear_readout(f, 2));
  try {
    saliency(multi, g);
    FAIL("expected MultiOutputUnsupported");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MultiOutputUnsupported);
  }
  Rng rng(2);
  multi.parameters().at("layer1.W") = random_matrix(rng, f.atom_width(), 2);
  const auto t1 = saliency(multi, g, 1);
  CHECK(t1.target == 1);
  CHECK(t1.scores(0) == doctest::Approx(multi.parameters().at("layer1.W").col(1).cwiseAbs().sum()));
  CHECK_THROWS_AS(saliency(multi, g, 2), Error);
  CHECK_THROWS_AS(saliency(model, merge({g, g})), Error);
}

TEST_CASE("layout places ring atoms on regular polygons") {
  const auto benzene = chem::parse_smiles("c1ccccc1");
  const auto pos = layout_2d(benzene, 0);
  for (const auto& b : benzene.bonds) {
    const double len = std::hypot(pos[b.src].first - pos[b.dst].first, pos[b.src].second - pos[b.dst].second);
    CHECK(len == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (const auto& p : pos) CHECK(std::hypot(p.first, p.second) == doctest::Approx(1.0).epsilon(1e-6));

  const auto naphthalene = chem::parse_smiles("c1ccc2ccccc2c1");
  const auto np = layout_2d(naphthalene, 3);
  for (const auto& b : naphthalene.bonds)
    CHECK(std::hypot(np[b.src].first - np[b.dst].first, np[b.src].second - np[b.dst].second) ==
          doctest::Approx(1.0).epsilon(1e-2));

  CHECK(layout_2d(chem::parse_smiles("CCN(CC)C(=O)c1ccccc1"), 7) == layout_2d(chem::parse_smiles("CCN(CC)C(=O)c1ccccc1"), 7));
  const auto single = layout_2d(chem::parse_smiles("C"), 1);
  CHECK(single.size() == 1);
}

TEST_CASE("svg rendering") {
  SUBCASE("benzene with uniform scores") {
    AttributionMap map;
    map.smiles = "c1ccccc1";
    map.scores = Vector::Constant(6, 0.4);
    const std::string svg = render_svg(map);
    CHECK(count(svg, "<circle") == 6);
    std::set<std::string> fills;
    const std::regex fill_re("<circle[^>]*fill=\"(#[0-9a-f]{6})\"");
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), fill_re); it != std::sregex_iterator(); ++it)
      fills.insert((*it)[1]);
    CHECK(fills == std::set<std::string>{diverging_color(1.0)});
    CHECK(count(svg, "<line ") == 12);  // aromatic bonds are drawn doubled
  }
  SUBCASE("single atom") {
    AttributionMap map;
    map.smiles = "O";
    map.scores = Vector::Constant(1, -2.0);
    const std::string svg = render_svg(map);
    CHECK(count(svg, "<circle") == 1);
    CHECK(count(svg, "<line ") == 0);
    CHECK(svg.find(diverging_color(-1.0)) != std::string::npos);
  }
  SUBCASE("colour scale") {
    CHECK(diverging_color(0.0) == "#ffffff");
    CHECK(diverging_color(1.0) == "#1a9641");
    CHECK(diverging_color(-1.0) == "#7b3294");
    CHECK(diverging_color(5.0) == diverging_color(1.0));
  }
  SUBCASE("golden fixture") {
    AttributionMap map;
    map.smiles = "CC(=O)Nc1ccc(O)cc1";
    map.kind = AttributionKind::Gradcam;
    map.prediction = 1.25;
    map.scores.resize(11);
    map.scores << 0.1, -0.3, 0.8, -0.05, 0.0, 0.2, 0.25, -0.6, 1.0, 0.2, 0.25;
    SvgOptions options;
    options.seed = 42;
    const std::string svg = render_svg(map, options);
    CHECK(svg == render_svg(map, options));
    const fs::path fixture = fs::path(MOLGNN_TEST_DATA) / "golden_attribution.svg";
    CHECK(svg == slurp(fixture));
  }
}

TEST_CASE("attribution csv export") {
  const auto f = features();
  GnnModel model(gcn_head(f));
  const auto map = explain(model, "OCC#N", AttributionKind::Saliency);
  const auto path = fs::temp_directory_path() / "molgnn_attr.csv";
  write_attribution_csv(path, map);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "atom_index,element,score");
  std::getline(in, line);
  CHECK(line.rfind("0,O,", 0) == 0);
  CHECK(std::stod(line.substr(4)) == map.scores(0));
  fs::remove(path);
}
