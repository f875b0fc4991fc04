#include <doctest.h>

#include "molgnn/csv.hpp"
#include "molgnn/error.hpp"
#include "molgnn/featurize.hpp"

using namespace molgnn;

namespace {

// Index of the hot slot inside a named atom block.
int hot_slot(const Vector& row, const FeatureConfig& cfg, const std::string& block) {
  int offset = 0;
  for (const auto& b : cfg.atom_features) {
    if (b.name == block) {
      for (int k = 0; k < b.width(); ++k)
        if (row(offset + k) == 1.0) return k;
      return -1;
    }
    offset += b.width();
  }
  return -2;
}

int bond_slot(const Vector& row, const FeatureConfig& cfg, const std::string& block) {
  int offset = 0;
  for (const auto& b : cfg.bond_features) {
    if (b.name == block) {
      if (b.binary()) return static_cast<int>(row(offset));
      for (int k = 0; k < b.width(); ++k)
        if (row(offset + k) == 1.0) return k;
      return -1;
    }
    offset += b.width();
  }
  return -2;
}

}  // namespace

TEST_CASE("featurize_atom: documented examples") {
  const auto cfg = FeatureConfig::from_names({"symbol", "degree", "aromatic"}, {});
  CHECK(cfg.atom_width() == 11 + 8 + 1);

  const auto benzene = chem::parse_smiles("c1ccccc1");
  const Vector row = featurize_atom(benzene.atoms[0], benzene, cfg);
  CHECK(hot_slot(row, cfg, "symbol") == 1);  // C
  CHECK(hot_slot(row, cfg, "degree") == 2);
  CHECK(row(cfg.atom_width() - 1) == 1.0);

  const auto selenium = chem::parse_smiles("[Se]");
  CHECK(hot_slot(featurize_atom(selenium.atoms[0], selenium, cfg), cfg, "symbol") == 10);

  const auto hcfg = FeatureConfig::from_names({"num_hydrogens"}, {});
  const auto methane = chem::parse_smiles("C");
  CHECK(hot_slot(featurize_atom(methane.atoms[0], methane, hcfg), hcfg, "num_hydrogens") == 4);
}

TEST_CASE("featurize_atom: derived chemistry flags") {
  const auto cfg = FeatureConfig::standard();
  auto flag = [&](const std::string& smiles, int atom, const std::string& name) {
    const auto mol = chem::parse_smiles(smiles);
    const Vector row = featurize_atom(mol.atoms[atom], mol, cfg);
    return row(cfg.atom_block_offset(name));
  };
  CHECK(flag("c1ccncc1", 3, "hydrogen_acceptor") == 1.0);  // pyridine N
  CHECK(flag("c1cc[nH]c1", 3, "hydrogen_acceptor") == 0.0);  // pyrrole N
  CHECK(flag("c1cc[nH]c1", 3, "hydrogen_donor") == 1.0);
  CHECK(flag("Cn1cccc1", 1, "hydrogen_acceptor") == 0.0);
  CHECK(flag("C[NH3+]", 1, "hydrogen_acceptor") == 0.0);
  CHECK(flag("CCO", 2, "hydrogen_donor") == 1.0);
  CHECK(flag("COC", 1, "hydrogen_donor") == 0.0);
  CHECK(flag("CCO", 2, "hetero") == 1.0);
  CHECK(flag("CCO", 0, "hetero") == 0.0);
  CHECK(flag("C1CC1", 0, "ring_member") == 1.0);

  auto slot = [&](const std::string& smiles, int atom, const std::string& name) {
    const auto mol = chem::parse_smiles(smiles);
    return hot_slot(featurize_atom(mol.atoms[atom], mol, cfg), cfg, name);
  };
  CHECK(slot("C#N", 0, "hybridization") == 0);    // sp
  CHECK(slot("O=C=O", 1, "hybridization") == 0);  // sp
  CHECK(slot("C=C", 0, "hybridization") == 1);    // sp2
  CHECK(slot("c1ccccc1", 0, "hybridization") == 1);
  CHECK(slot("CC", 0, "hybridization") == 2);     // sp3
  CHECK(slot("[Na+]", 0, "hybridization") == 3);  // other
  CHECK(slot("C1CC1", 0, "ring_size") == 0);
  CHECK(slot("c1ccccc1", 0, "ring_size") == 3);
  CHECK(slot("CC", 0, "ring_size") == 6);         // none/large slot
  CHECK(slot("C1CCCCCCCC1", 0, "ring_size") == 6);
  CHECK(slot("CCO", 2, "valence_electrons") == 5);  // 6 electrons
  CHECK(slot("C[N+](=O)[O-]", 1, "formal_charge") == 3);
  CHECK(slot("[CH3]", 0, "radical_electrons") == 1);
}

TEST_CASE("featurize_bond: documented examples") {
  const auto cfg = FeatureConfig::standard();
  const auto benzene = chem::parse_smiles("c1ccccc1");
  const Vector ring = featurize_bond(benzene.bonds[0], benzene, cfg);
  CHECK(bond_slot(ring, cfg, "bond_type") == 3);
  CHECK(bond_slot(ring, cfg, "conjugated") == 1);
  CHECK(bond_slot(ring, cfg, "ring_member") == 1);
  CHECK(bond_slot(ring, cfg, "ring_size") == 3);

  const auto ethane = chem::parse_smiles("CC");
  const Vector single = featurize_bond(ethane.bonds[0], ethane, cfg);
  CHECK(bond_slot(single, cfg, "bond_type") == 0);
  CHECK(bond_slot(single, cfg, "conjugated") == 0);
  CHECK(bond_slot(single, cfg, "rotatable") == 0);
  CHECK(bond_slot(single, cfg, "ring_member") == 0);

  const auto butadiene = chem::parse_smiles("C=CC=C");
  const Vector central = featurize_bond(butadiene.bonds[1], butadiene, cfg);
  CHECK(bond_slot(central, cfg, "bond_type") == 0);
  CHECK(bond_slot(central, cfg, "conjugated") == 1);
  CHECK(bond_slot(central, cfg, "rotatable") == 1);
}

TEST_CASE("feature config: names, excluded descriptors, JSON") {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ConfigError;
  };
  CHECK(code_of([] { FeatureConfig::from_names({"nonsense"}, {}); }) == ErrorCode::UnknownFeatureName);
  CHECK(code_of([] { FeatureConfig::from_names({"gasteiger_charge"}, {}); }) == ErrorCode::UnknownFeatureName);
  CHECK(code_of([] { FeatureConfig::from_names({"symbol"}, {"stereo"}); }) == ErrorCode::UnknownFeatureName);

  const auto cfg = FeatureConfig::standard();
  const auto back = FeatureConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
  CHECK(back == cfg);
  CHECK(back.digest() == cfg.digest());
  auto other = cfg;
  other.self_loops = true;
  CHECK(other.digest() != cfg.digest());

  // Short form: plain names pick up default vocabularies.
  const auto short_form = FeatureConfig::from_json(
      nlohmann::json::parse(R"({"atom_features":["symbol","aromatic"],"bond_features":["bond_type"]})"));
  CHECK(short_form.atom_width() == 12);
  CHECK(short_form.bond_width() == 5);
  CHECK(code_of([] { FeatureConfig::from_json(nlohmann::json::parse(R"({"atom_features":["symbol"],"extra":1})")); }) ==
        ErrorCode::ConfigError);
}

TEST_CASE("encode_molecule") {
  const auto cfg = FeatureConfig::standard();
  const int d = cfg.atom_width();
  const auto benzene = encode_molecule("c1ccccc1", cfg);
  CHECK(benzene.node_feature.rows() == 6);
  CHECK(benzene.node_feature.cols() == d);
  CHECK(benzene.edge_src.size() == 12);
  CHECK(benzene.sizes == std::vector<int>{6});
  for (std::size_t e = 1; e < benzene.edge_src.size(); ++e) {
    CHECK(std::make_pair(benzene.edge_src[e - 1], benzene.edge_dst[e - 1]) <
          std::make_pair(benzene.edge_src[e], benzene.edge_dst[e]));
  }
  // Reverse edges carry identical features.
  for (std::size_t e = 0; e < benzene.edge_src.size(); ++e) {
    for (std::size_t f = 0; f < benzene.edge_src.size(); ++f) {
      if (benzene.edge_src[e] == benzene.edge_dst[f] && benzene.edge_dst[e] == benzene.edge_src[f])
        CHECK(benzene.edge_feature->row(e) == benzene.edge_feature->row(f));
    }
  }

  const auto methane = encode_molecule("C", cfg);
  CHECK(methane.node_feature.rows() == 1);
  CHECK(methane.edge_src.empty());

  const auto dot = encode_molecule("C.C", cfg);
  CHECK(dot.sizes == std::vector<int>{2});
  CHECK(dot.edge_src.empty());

  auto looped = cfg;
  looped.self_loops = true;
  const auto ethane = encode_molecule("CC", looped);
  CHECK(ethane.edge_src.size() == 4);
  CHECK(ethane.edge_feature->row(0).isZero());  // (0,0) self loop
}

TEST_CASE("encode_batch") {
  const auto cfg = FeatureConfig::standard();
  const auto batch = encode_batch({"C", "CC"}, cfg);
  CHECK(batch.graph.sizes == std::vector<int>{1, 2});
  CHECK(batch.graph.num_nodes() == 3);
  CHECK(batch.graph.edge_src == std::vector<int>{1, 2});
  CHECK(batch.graph.edge_dst == std::vector<int>{2, 1});

  try {
    encode_batch({}, cfg);
    FAIL("expected EmptyBatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyBatch);
  }
  try {
    encode_batch({"C1CC", "C"}, cfg);
    FAIL("expected ParseFailures");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseFailures);
    CHECK(std::string(e.what()).find("index 0") != std::string::npos);
  }
  const auto lenient = encode_batch({"C1CC", "C", "CX"}, cfg, /*strict=*/false);
  CHECK(lenient.kept == std::vector<std::size_t>{1});
  REQUIRE(lenient.failures.size() == 2);
  CHECK(lenient.failures[1].index == 2);
}

TEST_CASE("property: constant width, one-hot blocks sum to one, batch equals merge") {
  const auto cfg = FeatureConfig::standard();
  const auto table = read_csv(std::string(MOLGNN_TEST_DATA) + "/esol.csv");
  std::vector<std::string> smiles;
  for (std::size_t i = 0; i < table.rows.size(); i += 7) smiles.push_back(table.rows[i][0]);

  std::vector<GraphTensor> singles;
  for (const auto& s : smiles) {
    const auto g = encode_molecule(s, cfg);
    CHECK(g.node_feature.cols() == cfg.atom_width());
    CHECK(g.node_feature.allFinite());
    for (Index i = 0; i < g.num_nodes(); ++i) {
      int col = 0;
      for (const auto& block : cfg.atom_features) {
        const double total = g.node_feature.row(i).segment(col, block.width()).sum();
        if (block.binary()) CHECK((total == 0.0 || total == 1.0));
        else CHECK(total == 1.0);
        col += block.width();
      }
    }
    for (Index e = 0; e < g.num_edges(); ++e) {
      int col = 0;
      for (const auto& block : cfg.bond_features) {
        const double total = g.edge_feature->row(e).segment(col, block.width()).sum();
        if (!block.binary()) CHECK(total == 1.0);
        col += block.width();
      }
    }
    singles.push_back(g);
  }
  const auto batch = encode_batch(smiles, cfg);
  CHECK(approx_equal(batch.graph, merge(singles), 0.0));
}
