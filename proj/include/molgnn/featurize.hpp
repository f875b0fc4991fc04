#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "molgnn/chem/molecule.hpp"
#include "molgnn/digest.hpp"
#include "molgnn/graph_tensor.hpp"

namespace molgnn {

/// One feature block. Categorical blocks one-hot encode over `vocabulary`
/// plus a trailing out-of-vocabulary slot; binary blocks are one column.
struct FeatureBlock {
  std::string name;
  std::vector<std::string> vocabulary;  // empty for binary features

  bool binary() const { return vocabulary.empty(); }
  int width() const { return binary() ? 1 : static_cast<int>(vocabulary.size()) + 1; }

  bool operator==(const FeatureBlock&) const = default;
};

struct FeatureConfig {
  std::vector<FeatureBlock> atom_features;
  std::vector<FeatureBlock> bond_features;
  bool include_edge_features = true;
  bool self_loops = false;

  int atom_width() const;
  int bond_width() const;
  /// Column offset of a named atom block, -1 when absent.
  int atom_block_offset(const std::string& name) const;

  /// All in-scope atom and bond features with their default vocabularies.
  static FeatureConfig standard();
  /// Builds blocks from names using the default vocabularies.
  static FeatureConfig from_names(const std::vector<std::string>& atom_names,
                                  const std::vector<std::string>& bond_names,
                                  bool include_edge_features = true, bool self_loops = false);

  nlohmann::json to_json() const;
  static FeatureConfig from_json(const nlohmann::json& doc);
  /// SHA-256 of the canonical JSON encoding.
  Digest digest() const;

  bool operator==(const FeatureConfig&) const = default;
};

/// Default vocabulary for a known feature; throws UnknownFeatureName.
std::vector<std::string> default_atom_vocabulary(const std::string& name);
std::vector<std::string> default_bond_vocabulary(const std::string& name);

Vector featurize_atom(const chem::Atom& atom, const chem::Molecule& mol, const FeatureConfig& cfg);
Vector featurize_bond(const chem::Bond& bond, const chem::Molecule& mol, const FeatureConfig& cfg);

GraphTensor encode_molecule(const chem::Molecule& mol, const FeatureConfig& cfg);
GraphTensor encode_molecule(std::string_view smiles, const FeatureConfig& cfg);

struct EncodeFailure {
  std::size_t index;
  std::string smiles;
  std::string reason;
};

struct BatchEncoding {
  GraphTensor graph;
  std::vector<std::size_t> kept;  // input indices present in graph, in order
  std::vector<EncodeFailure> failures;
};

/// Strict mode throws ParseFailures listing every bad index; lenient mode
/// skips them and reports. An empty input (or nothing parseable) is EmptyBatch.
BatchEncoding encode_batch(const std::vector<std::string>& smiles, const FeatureConfig& cfg,
                           bool strict = true);

}  // namespace molgnn
