#include "molgnn/featurize.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "molgnn/error.hpp"

namespace molgnn {

using chem::Atom;
using chem::Bond;
using chem::BondOrder;
using chem::Element;
using chem::Molecule;

namespace {

const std::vector<std::string> kAtomFeatureOrder = {
    "symbol",          "degree",            "formal_charge", "num_hydrogens",
    "hybridization",   "aromatic",          "hetero",        "hydrogen_donor",
    "hydrogen_acceptor", "ring_member",     "ring_size",     "valence_electrons",
    "radical_electrons"};

const std::vector<std::string> kBondFeatureOrder = {"bond_type", "conjugated", "rotatable",
                                                    "ring_member", "ring_size"};

// Continuous or stereo descriptors that need pattern libraries or 3D
// perception; they are rejected with a dedicated message.
const std::set<std::string> kExcluded = {"gasteiger_charge", "crippen_logp", "crippen_mr",
                                         "labute_asa",       "tpsa",         "chirality",
                                         "cip_code",         "stereo"};

std::vector<std::string> range_labels(int lo, int hi) {
  std::vector<std::string> out;
  for (int v = lo; v <= hi; ++v) out.push_back(std::to_string(v));
  return out;
}

[[noreturn]] void unknown_feature(const std::string& name, const char* side) {
  if (kExcluded.count(name)) {
    throw Error(ErrorCode::UnknownFeatureName,
                "'" + name + "' is a continuous/stereo descriptor and is not supported");
  }
  throw Error(ErrorCode::UnknownFeatureName, std::string("unknown ") + side + " feature '" + name + "'");
}

bool has_order(const Molecule& mol, int atom, BondOrder order, bool kekulized = false) {
  return std::any_of(mol.bonds.begin(), mol.bonds.end(), [&](const Bond& b) {
    return (b.src == atom || b.dst == atom) && (kekulized ? b.kekulized_order : b.order) == order;
  });
}

int count_order(const Molecule& mol, int atom, BondOrder order) {
  return static_cast<int>(std::count_if(mol.bonds.begin(), mol.bonds.end(), [&](const Bond& b) {
    return (b.src == atom || b.dst == atom) && b.order == order;
  }));
}

std::string hybridization(const Atom& atom, const Molecule& mol) {
  const int degree = mol.degree(atom.index);
  if (degree == 0 && atom.total_h() == 0) return "other";
  if (has_order(mol, atom.index, BondOrder::Triple) ||
      count_order(mol, atom.index, BondOrder::Double) >= 2)
    return "sp";
  if (atom.aromatic || has_order(mol, atom.index, BondOrder::Double)) return "sp2";
  return "sp3";
}

bool pyrrole_type_nitrogen(const Atom& atom, const Molecule& mol) {
  return atom.element == Element::N && atom.aromatic &&
         !has_order(mol, atom.index, BondOrder::Double, /*kekulized=*/true) &&
         mol.degree(atom.index) + atom.total_h() == 3;
}

std::string ring_size_label(int size) { return size == 0 ? "none" : std::to_string(size); }

std::string atom_category(const std::string& name, const Atom& atom, const Molecule& mol) {
  if (name == "symbol") return atom.symbol;
  if (name == "degree") return std::to_string(mol.degree(atom.index));
  if (name == "formal_charge") return std::to_string(atom.formal_charge);
  if (name == "num_hydrogens") return std::to_string(atom.total_h());
  if (name == "hybridization") return hybridization(atom, mol);
  if (name == "ring_size") return ring_size_label(mol.smallest_ring_of_atom(atom.index));
  if (name == "valence_electrons") return std::to_string(chem::valence_electrons(atom.atomic_number));
  if (name == "radical_electrons") return std::to_string(atom.radical_electrons);
  unknown_feature(name, "atom");
}

double atom_flag(const std::string& name, const Atom& atom, const Molecule& mol) {
  const Element e = atom.element;
  if (name == "aromatic") return atom.aromatic;
  if (name == "hetero") return e != Element::C && e != Element::H;
  if (name == "hydrogen_donor")
    return (e == Element::N || e == Element::O || e == Element::S) && atom.total_h() >= 1;
  if (name == "hydrogen_acceptor")
    return (e == Element::N || e == Element::O) && atom.formal_charge <= 0 &&
           !pyrrole_type_nitrogen(atom, mol);
  if (name == "ring_member") return mol.smallest_ring_of_atom(atom.index) > 0;
  unknown_feature(name, "atom");
}

std::string bond_category(const std::string& name, const Bond& bond, const Molecule& mol,
                          int bond_index) {
  if (name == "bond_type") {
    switch (bond.order) {
      case BondOrder::Single: return "single";
      case BondOrder::Double: return "double";
      case BondOrder::Triple: return "triple";
      case BondOrder::Aromatic: return "aromatic";
    }
  }
  if (name == "ring_size") return ring_size_label(mol.smallest_ring_of_bond(bond_index));
  unknown_feature(name, "bond");
}

double bond_flag(const std::string& name, const Bond& bond) {
  if (name == "conjugated") return bond.conjugated;
  if (name == "rotatable") return bond.rotatable;
  if (name == "ring_member") return bond.in_ring;
  unknown_feature(name, "bond");
}

void write_block(const FeatureBlock& block, const std::string& category, Vector& out, int& col) {
  const auto it = std::find(block.vocabulary.begin(), block.vocabulary.end(), category);
  const auto slot = static_cast<int>(it - block.vocabulary.begin());  // == size() for OOV
  out(col + slot) = 1.0;
  col += block.width();
}

int bond_index_of(const Molecule& mol, const Bond& bond) {
  return static_cast<int>(&bond - mol.bonds.data());
}

}  // namespace

std::vector<std::string> default_atom_vocabulary(const std::string& name) {
  if (name == "symbol") return {"B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"};
  if (name == "degree") return range_labels(0, 6);
  if (name == "formal_charge") return range_labels(-2, 2);
  if (name == "num_hydrogens") return range_labels(0, 4);
  if (name == "hybridization") return {"sp", "sp2", "sp3"};
  if (name == "ring_size") return range_labels(3, 8);
  if (name == "valence_electrons") return range_labels(1, 8);
  if (name == "radical_electrons") return range_labels(0, 2);
  if (name == "aromatic" || name == "hetero" || name == "hydrogen_donor" ||
      name == "hydrogen_acceptor" || name == "ring_member")
    return {};
  unknown_feature(name, "atom");
}

std::vector<std::string> default_bond_vocabulary(const std::string& name) {
  if (name == "bond_type") return {"single", "double", "triple", "aromatic"};
  if (name == "ring_size") return range_labels(3, 8);
  if (name == "conjugated" || name == "rotatable" || name == "ring_member") return {};
  unknown_feature(name, "bond");
}

int FeatureConfig::atom_width() const {
  return std::accumulate(atom_features.begin(), atom_features.end(), 0,
                         [](int acc, const FeatureBlock& b) { return acc + b.width(); });
}

int FeatureConfig::bond_width() const {
  return std::accumulate(bond_features.begin(), bond_features.end(), 0,
                         [](int acc, const FeatureBlock& b) { return acc + b.width(); });
}

int FeatureConfig::atom_block_offset(const std::string& name) const {
  int offset = 0;
  for (const auto& block : atom_features) {
    if (block.name == name) return offset;
    offset += block.width();
  }
  return -1;
}

FeatureConfig FeatureConfig::from_names(const std::vector<std::string>& atom_names,
                                        const std::vector<std::string>& bond_names,
                                        bool include_edge_features, bool self_loops) {
  FeatureConfig cfg;
  for (const auto& name : atom_names) cfg.atom_features.push_back({name, default_atom_vocabulary(name)});
  for (const auto& name : bond_names) cfg.bond_features.push_back({name, default_bond_vocabulary(name)});
  cfg.include_edge_features = include_edge_features;
  cfg.self_loops = self_loops;
  return cfg;
}

FeatureConfig FeatureConfig::standard() { return from_names(kAtomFeatureOrder, kBondFeatureOrder); }

nlohmann::json FeatureConfig::to_json() const {
  auto blocks = [](const std::vector<FeatureBlock>& src) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : src) arr.push_back({{"name", b.name}, {"vocabulary", b.vocabulary}});
    return arr;
  };
  return {{"atom_features", blocks(atom_features)},
          {"bond_features", blocks(bond_features)},
          {"include_edge_features", include_edge_features},
          {"self_loops", self_loops}};
}

FeatureConfig FeatureConfig::from_json(const nlohmann::json& doc) {
  static const std::set<std::string> kKeys = {"atom_features", "bond_features",
                                              "include_edge_features", "self_loops"};
  if (!doc.is_object()) throw Error(ErrorCode::ConfigError, "feature config must be an object");
  for (const auto& [key, _] : doc.items()) {
    if (!kKeys.count(key)) throw Error(ErrorCode::ConfigError, "unknown feature config key '" + key + "'");
  }
  FeatureConfig cfg;
  auto read_blocks = [](const nlohmann::json& arr, bool atom_side) {
    std::vector<FeatureBlock> out;
    for (const auto& item : arr) {
      FeatureBlock block;
      if (item.is_string()) {
        block.name = item.get<std::string>();
        block.vocabulary = atom_side ? default_atom_vocabulary(block.name)
                                     : default_bond_vocabulary(block.name);
      } else {
        block.name = item.at("name").get<std::string>();
        const auto defaults = atom_side ? default_atom_vocabulary(block.name)
                                        : default_bond_vocabulary(block.name);
        block.vocabulary = item.contains("vocabulary")
                               ? item.at("vocabulary").get<std::vector<std::string>>()
                               : defaults;
        if (defaults.empty() != block.vocabulary.empty())
          throw Error(ErrorCode::ConfigError, "feature '" + block.name + "' vocabulary kind mismatch");
      }
      out.push_back(std::move(block));
    }
    return out;
  };
  try {
    if (doc.contains("atom_features")) cfg.atom_features = read_blocks(doc.at("atom_features"), true);
    if (doc.contains("bond_features")) cfg.bond_features = read_blocks(doc.at("bond_features"), false);
    cfg.include_edge_features = doc.value("include_edge_features", true);
    cfg.self_loops = doc.value("self_loops", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("feature config: ") + e.what());
  }
  if (cfg.atom_features.empty()) throw Error(ErrorCode::ConfigError, "no atom features configured");
  return cfg;
}

Digest FeatureConfig::digest() const { return sha256(to_json().dump()); }

Vector featurize_atom(const Atom& atom, const Molecule& mol, const FeatureConfig& cfg) {
  Vector out = Vector::Zero(cfg.atom_width());
  int col = 0;
  for (const auto& block : cfg.atom_features) {
    if (block.binary()) {
      out(col) = atom_flag(block.name, atom, mol);
      col += 1;
    } else {
      write_block(block, atom_category(block.name, atom, mol), out, col);
    }
  }
  return out;
}

Vector featurize_bond(const Bond& bond, const Molecule& mol, const FeatureConfig& cfg) {
  Vector out = Vector::Zero(cfg.bond_width());
  int col = 0;
  const int index = bond_index_of(mol, bond);
  for (const auto& block : cfg.bond_features) {
    if (block.binary()) {
      out(col) = bond_flag(block.name, bond);
      col += 1;
    } else {
      write_block(block, bond_category(block.name, bond, mol, index), out, col);
    }
  }
  return out;
}

GraphTensor encode_molecule(const Molecule& mol, const FeatureConfig& cfg) {
  GraphTensor g;
  const Index n = static_cast<Index>(mol.atoms.size());
  g.sizes = {static_cast<int>(n)};
  g.node_feature.resize(n, cfg.atom_width());
  for (const auto& atom : mol.atoms) g.node_feature.row(atom.index) = featurize_atom(atom, mol, cfg).transpose();

  struct DirectedEdge {
    int src, dst, bond;  // bond == -1 for self loops
  };
  std::vector<DirectedEdge> edges;
  for (std::size_t b = 0; b < mol.bonds.size(); ++b) {
    const auto& bond = mol.bonds[b];
    edges.push_back({bond.src, bond.dst, static_cast<int>(b)});
    edges.push_back({bond.dst, bond.src, static_cast<int>(b)});
  }
  if (cfg.self_loops) {
    for (int i = 0; i < n; ++i) edges.push_back({i, i, -1});
  }
  std::sort(edges.begin(), edges.end(), [](const DirectedEdge& a, const DirectedEdge& b) {
    return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
  });

  const Index ne = static_cast<Index>(edges.size());
  if (cfg.include_edge_features) g.edge_feature = Matrix::Zero(ne, cfg.bond_width());
  std::vector<Vector> bond_rows;
  if (cfg.include_edge_features) {
    for (const auto& bond : mol.bonds) bond_rows.push_back(featurize_bond(bond, mol, cfg));
  }
  for (Index e = 0; e < ne; ++e) {
    g.edge_src.push_back(edges[e].src);
    g.edge_dst.push_back(edges[e].dst);
    if (cfg.include_edge_features && edges[e].bond >= 0)
      g.edge_feature->row(e) = bond_rows[edges[e].bond].transpose();
  }
  return g;
}

GraphTensor encode_molecule(std::string_view smiles, const FeatureConfig& cfg) {
  return encode_molecule(chem::parse_smiles(smiles), cfg);
}

BatchEncoding encode_batch(const std::vector<std::string>& smiles, const FeatureConfig& cfg,
                           bool strict) {
  if (smiles.empty()) throw Error(ErrorCode::EmptyBatch, "no molecules to encode");
  BatchEncoding out;
  std::vector<GraphTensor> graphs;
  for (std::size_t i = 0; i < smiles.size(); ++i) {
    try {
      graphs.push_back(encode_molecule(smiles[i], cfg));
      out.kept.push_back(i);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::UnknownFeatureName) throw;
      out.failures.push_back({i, smiles[i], e.what()});
    }
  }
  if (strict && !out.failures.empty()) {
    std::string msg = "unparseable SMILES at index";
    for (const auto& f : out.failures) msg += " " + std::to_string(f.index) + " (" + f.reason + ")";
    throw Error(ErrorCode::ParseFailures, msg);
  }
  if (graphs.empty()) throw Error(ErrorCode::EmptyBatch, "no parseable molecules");
  out.graph = merge(graphs);
  return out;
}

}  // namespace molgnn
