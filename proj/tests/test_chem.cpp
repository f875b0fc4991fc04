#include <doctest.h>

#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include "molgnn/chem/molecule.hpp"
#include "molgnn/csv.hpp"
#include "molgnn/error.hpp"

using namespace molgnn;
using namespace molgnn::chem;

namespace {

ErrorCode error_of(const std::string& smiles) {
  try {
    parse_smiles(smiles);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error for " << smiles);
  return ErrorCode::ConfigError;
}

int count_order(const Molecule& mol, BondOrder order, bool kekulized = false) {
  return static_cast<int>(std::count_if(mol.bonds.begin(), mol.bonds.end(), [&](const Bond& b) {
    return (kekulized ? b.kekulized_order : b.order) == order;
  }));
}

std::vector<int> ring_sizes(const Molecule& mol) {
  std::vector<int> out;
  for (const auto& r : mol.rings) out.push_back(static_cast<int>(r.size()));
  std::sort(out.begin(), out.end());
  return out;
}

// Every simple cycle as a bond set, by DFS from each start atom.
std::vector<std::set<int>> all_simple_cycles(const Molecule& mol) {
  const auto adj = mol.adjacency();
  std::set<std::set<int>> found;
  const int n = static_cast<int>(mol.atoms.size());
  std::vector<int> path_bonds;
  std::vector<char> on_path(n, 0);
  std::function<void(int, int)> dfs = [&](int start, int u) {
    for (int b : adj[u]) {
      const int v = mol.bonds[b].other(u);
      if (v == start && path_bonds.size() >= 2 &&
          std::find(path_bonds.begin(), path_bonds.end(), b) == path_bonds.end()) {
        std::set<int> cyc(path_bonds.begin(), path_bonds.end());
        cyc.insert(b);
        found.insert(cyc);
      } else if (!on_path[v] && v > start) {
        on_path[v] = 1;
        path_bonds.push_back(b);
        dfs(start, v);
        path_bonds.pop_back();
        on_path[v] = 0;
      }
    }
  };
  for (int s = 0; s < n; ++s) {
    on_path[s] = 1;
    dfs(s, s);
    on_path[s] = 0;
  }
  return {found.begin(), found.end()};
}

int gf2_rank(std::vector<std::set<int>> rows) {
  int rank = 0;
  while (!rows.empty()) {
    auto pivot_row = rows.back();
    rows.pop_back();
    if (pivot_row.empty()) continue;
    ++rank;
    const int pivot = *pivot_row.begin();
    for (auto& r : rows) {
      if (r.count(pivot)) {
        std::set<int> x;
        std::set_symmetric_difference(r.begin(), r.end(), pivot_row.begin(), pivot_row.end(),
                                      std::inserter(x, x.begin()));
        r = x;
      }
    }
  }
  return rank;
}

}  // namespace

TEST_CASE("parse_smiles: documented examples") {
  SUBCASE("methane") {
    const auto mol = parse_smiles("C");
    REQUIRE(mol.atoms.size() == 1);
    CHECK(mol.bonds.empty());
    CHECK(mol.atoms[0].implicit_h == 4);
  }
  SUBCASE("benzene") {
    const auto mol = parse_smiles("c1ccccc1");
    REQUIRE(mol.atoms.size() == 6);
    CHECK(count_order(mol, BondOrder::Aromatic) == 6);
    for (const auto& a : mol.atoms) {
      CHECK(a.aromatic);
      CHECK(a.implicit_h == 1);
    }
  }
  SUBCASE("acetic acid") {
    const auto mol = parse_smiles("CC(=O)O");
    CHECK(mol.atoms.size() == 4);
    CHECK(mol.bonds.size() == 3);
    REQUIRE(count_order(mol, BondOrder::Double) == 1);
    const auto& dbl = *std::find_if(mol.bonds.begin(), mol.bonds.end(),
                                    [](const Bond& b) { return b.order == BondOrder::Double; });
    CHECK(mol.atoms[dbl.src].symbol == "C");
    CHECK(mol.atoms[dbl.dst].symbol == "O");
  }
  SUBCASE("atoms in encounter order, branches and two-letter symbols") {
    const auto mol = parse_smiles("ClC(Br)CN");
    REQUIRE(mol.atoms.size() == 5);
    CHECK(mol.atoms[0].symbol == "Cl");
    CHECK(mol.atoms[2].symbol == "Br");
    CHECK(mol.atoms[4].symbol == "N");
    CHECK(mol.atoms[1].implicit_h == 1);
  }
}

TEST_CASE("parse_smiles: error kinds") {
  CHECK(error_of("C1CC") == ErrorCode::UnclosedRing);
  CHECK(error_of("") == ErrorCode::EmptyInput);
  CHECK(error_of("CC(C") == ErrorCode::UnbalancedParenthesis);
  CHECK(error_of("CC)C") == ErrorCode::UnbalancedParenthesis);
  CHECK(error_of("CXC") == ErrorCode::UnknownAtomToken);
  CHECK(error_of("C[Xx]") == ErrorCode::UnknownAtomToken);
  CHECK(error_of("C(C)(C)(C)(C)C") == ErrorCode::ValenceViolation);
  CHECK(error_of("O=O=O") == ErrorCode::ValenceViolation);
  CHECK(error_of("C11") == ErrorCode::InvalidBond);
  CHECK(error_of("c1ccc1") == ErrorCode::KekulizationFailure);
}

TEST_CASE("parse_smiles: bracket atoms, ring-closure forms, stereo") {
  const auto ammonium = parse_smiles("[NH4+]");
  CHECK(ammonium.atoms[0].explicit_h == 4);
  CHECK(ammonium.atoms[0].implicit_h == 0);
  CHECK(ammonium.atoms[0].formal_charge == 1);

  const auto iso = parse_smiles("[13CH3]O");
  CHECK(iso.atoms[0].isotope == 13);
  CHECK(iso.atoms[0].explicit_h == 3);

  const auto charged = parse_smiles("C[N+](=O)[O-]");
  CHECK(charged.atoms[1].formal_charge == 1);
  CHECK(charged.atoms[3].formal_charge == -1);

  const auto pct = parse_smiles("C%10CC%10");
  CHECK(ring_sizes(pct) == std::vector<int>{3});

  const auto stereo = parse_smiles("F/C=C/F");
  CHECK(stereo.stereo_marks == 2);
  CHECK(stereo.atoms.size() == 4);
  const auto chiral = parse_smiles("N[C@@H](C)C(=O)O");
  CHECK(chiral.stereo_marks == 1);
  CHECK(chiral.atoms[1].explicit_h == 1);

  const auto dot = parse_smiles("C.C");
  CHECK(dot.bonds.empty());
  CHECK(dot.components == 2);

  const auto radical = parse_smiles("[CH3]");
  CHECK(radical.atoms[0].radical_electrons == 1);
  CHECK(parse_smiles("[Se]").atoms[0].symbol == "Se");
}

TEST_CASE("perceive_rings") {
  CHECK(ring_sizes(parse_smiles("c1ccccc1")) == std::vector<int>{6});
  CHECK(ring_sizes(parse_smiles("C1CC1")) == std::vector<int>{3});
  CHECK(parse_smiles("CCO").rings.empty());

  SUBCASE("naphthalene against brute-force minimal basis") {
    const auto mol = parse_smiles("c1ccc2ccccc2c1");
    const auto cycles = all_simple_cycles(mol);
    const int k = static_cast<int>(mol.bonds.size() - mol.atoms.size()) + mol.components;
    REQUIRE(k == 2);
    // Exhaustive search over k-subsets for the independent set of minimal total size.
    std::size_t best = SIZE_MAX;
    std::vector<int> best_sizes;
    for (std::size_t i = 0; i < cycles.size(); ++i) {
      for (std::size_t j = i + 1; j < cycles.size(); ++j) {
        if (gf2_rank({cycles[i], cycles[j]}) != 2) continue;
        const std::size_t total = cycles[i].size() + cycles[j].size();
        if (total < best) {
          best = total;
          best_sizes = {static_cast<int>(cycles[i].size()), static_cast<int>(cycles[j].size())};
        }
      }
    }
    std::sort(best_sizes.begin(), best_sizes.end());
    CHECK(best_sizes == std::vector<int>{6, 6});
    CHECK(ring_sizes(mol) == best_sizes);
  }

  SUBCASE("cubane needs the full candidate set") {
    const auto mol = parse_smiles("C12C3C4C1C5C2C3C45");
    CHECK(mol.rings.size() == 5);
    CHECK(ring_sizes(mol) == std::vector<int>{4, 4, 4, 4, 4});
  }

  SUBCASE("every ring bond covered, bridges excluded") {
    const auto mol = parse_smiles("c1ccccc1CCC1CC1");
    for (std::size_t b = 0; b < mol.bonds.size(); ++b) {
      const bool covered = mol.smallest_ring_of_bond(static_cast<int>(b)) > 0;
      CHECK(covered == mol.bonds[b].in_ring);
    }
    CHECK(std::count_if(mol.bonds.begin(), mol.bonds.end(), [](const Bond& b) { return !b.in_ring; }) == 3);
  }

  SUBCASE("biphenyl link is demoted to a single bond") {
    const auto mol = parse_smiles("c1ccccc1c1ccccc1");
    CHECK(count_order(mol, BondOrder::Aromatic) == 12);
    CHECK(count_order(mol, BondOrder::Single) == 1);
  }
}

TEST_CASE("kekulize") {
  SUBCASE("benzene alternates") {
    const auto mol = parse_smiles("c1ccccc1");
    CHECK(count_order(mol, BondOrder::Double, true) == 3);
    CHECK(count_order(mol, BondOrder::Single, true) == 3);
    const auto adj = mol.adjacency();
    for (const auto& bonds : adj) {
      int doubles = 0;
      for (int b : bonds) doubles += mol.bonds[b].kekulized_order == BondOrder::Double;
      CHECK(doubles == 1);
    }
  }
  SUBCASE("pyridine: exhaustive matching check") {
    const auto mol = parse_smiles("c1ccncc1");
    const auto adj = mol.adjacency();
    // Enumerate all 2^6 double-bond subsets; valid ones give every atom exactly one.
    int valid = 0;
    std::uint32_t ours = 0;
    for (std::size_t b = 0; b < mol.bonds.size(); ++b)
      if (mol.bonds[b].kekulized_order == BondOrder::Double) ours |= 1u << b;
    bool ours_valid = false;
    for (std::uint32_t mask = 0; mask < 64; ++mask) {
      bool ok = true;
      for (const auto& bonds : adj) {
        int d = 0;
        for (int b : bonds) d += (mask >> b) & 1u;
        ok = ok && d == 1;
      }
      if (ok) {
        ++valid;
        ours_valid = ours_valid || mask == ours;
      }
    }
    CHECK(valid == 2);
    CHECK(ours_valid);
    CHECK(mol.atoms[3].symbol == "N");
    CHECK(mol.atoms[3].implicit_h == 0);
  }
  SUBCASE("pyrrole NH takes no double bond") {
    const auto mol = parse_smiles("c1cc[nH]c1");
    CHECK(count_order(mol, BondOrder::Double, true) == 2);
    CHECK(mol.atoms[3].total_h() == 1);
  }
  SUBCASE("exocyclic double bond satisfies the ring atom") {
    const auto mol = parse_smiles("O=c1cc[nH]cc1");
    CHECK(mol.atoms[1].implicit_h == 0);
  }
}

TEST_CASE("assign_implicit_hydrogens") {
  CHECK(parse_smiles("N").atoms[0].implicit_h == 3);
  const auto co2 = parse_smiles("O=C=O");
  for (const auto& a : co2.atoms) CHECK(a.implicit_h == 0);
  CHECK(parse_smiles("CS(=O)(=O)C").atoms[1].implicit_h == 0);
  CHECK(parse_smiles("OP(O)(O)=O").atoms[1].implicit_h == 0);
  CHECK(parse_smiles("CP(C)C").atoms[1].implicit_h == 0);
  CHECK(parse_smiles("FC(F)F").atoms[1].implicit_h == 1);
  CHECK(parse_smiles("B").atoms[0].implicit_h == 3);
}

TEST_CASE("perceive_bond_properties") {
  const auto butadiene = parse_smiles("C=CC=C");
  CHECK(butadiene.bonds[1].conjugated);
  CHECK(butadiene.bonds[1].rotatable);
  CHECK(butadiene.bonds[0].conjugated);

  const auto ethane = parse_smiles("CC");
  CHECK_FALSE(ethane.bonds[0].conjugated);
  CHECK_FALSE(ethane.bonds[0].rotatable);

  const auto hexane = parse_smiles("C1CCCCC1");
  for (const auto& b : hexane.bonds) CHECK_FALSE(b.rotatable);

  const auto acetic = parse_smiles("CC(=O)O");
  CHECK_FALSE(acetic.bonds[1].conjugated);
  CHECK(parse_smiles("CCCC").bonds[1].rotatable);
}

TEST_CASE("chemistry corpus: formulas, rings, aromatic atoms") {
  const auto table = read_csv(std::string(MOLGNN_TEST_DATA) + "/chem_corpus.csv");
  REQUIRE(table.rows.size() == 20);
  for (const auto& row : table.rows) {
    CAPTURE(row[0]);
    const auto mol = parse_smiles(row[1]);
    CHECK(mol.formula() == row[2]);
    std::string sizes;
    for (int s : ring_sizes(mol)) sizes += (sizes.empty() ? "" : ";") + std::to_string(s);
    CHECK(sizes == row[3]);
    const auto aromatic = std::count_if(mol.atoms.begin(), mol.atoms.end(), [](const Atom& a) { return a.aromatic; });
    CHECK(std::to_string(aromatic) == row[4]);
  }
}

TEST_CASE("solubility corpus: formulas and cycle-basis size") {
  const auto table = read_csv(std::string(MOLGNN_TEST_DATA) + "/esol_formulas.csv");
  REQUIRE(table.rows.size() > 1000);
  for (const auto& row : table.rows) {
    CAPTURE(row[0]);
    const auto mol = parse_smiles(row[0]);
    CHECK(mol.formula() == row[1]);
    CHECK(static_cast<int>(mol.rings.size()) == std::stoi(row[2]));
    CHECK(static_cast<int>(mol.rings.size()) ==
          static_cast<int>(mol.bonds.size()) - static_cast<int>(mol.atoms.size()) + mol.components);
    // Determinism: a second parse is structurally identical.
    const auto again = parse_smiles(row[0]);
    CHECK(again.rings == mol.rings);
    CHECK(again.bonds.size() == mol.bonds.size());
  }
}

TEST_CASE("property: random grammar strings parse to one atom per atom token") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> atoms = {"C", "N", "O", "Cl", "[NH4+]", "S"};
  for (int trial = 0; trial < 300; ++trial) {
    // Linear chain with branches; every non-terminal atom is carbon so valence holds.
    std::string smiles = "C";
    int tokens = 1;
    const int length = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < length; ++i) {
      if (rng() % 3 == 0) {
        const auto& a = atoms[rng() % 4];
        smiles += "(" + a + ")";
        ++tokens;
      }
      smiles += "C";
      ++tokens;
    }
    if (rng() % 2) {
      smiles += ".";
      smiles += atoms[rng() % atoms.size()];
      ++tokens;
    }
    CAPTURE(smiles);
    const auto mol = parse_smiles(smiles);
    CHECK(static_cast<int>(mol.atoms.size()) == tokens);
    for (const auto& b : mol.bonds) {
      CHECK(b.src >= 0);
      CHECK(b.dst < static_cast<int>(mol.atoms.size()));
      CHECK(b.src != b.dst);
    }
  }
}
