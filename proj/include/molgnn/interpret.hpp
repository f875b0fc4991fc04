#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "molgnn/chem/molecule.hpp"
#include "molgnn/model.hpp"

namespace molgnn {

enum class AttributionKind { Saliency, Gradcam };

std::string to_string(AttributionKind kind);

struct AttributionMap {
  std::string smiles;                 // empty when built from a bare graph
  std::vector<std::string> elements;  // per atom, empty when unknown
  Vector scores;                      // one per atom
  AttributionKind kind = AttributionKind::Saliency;
  double prediction = 0.0;
  int target = 0;
};

/// |d y / d x| summed over the input features of each atom. Multi-output
/// models need `target`; otherwise MultiOutputUnsupported.
AttributionMap saliency(const GnnModel& model, const GraphTensor& g, std::optional<int> target = std::nullopt);

/// Signed gradient-weighted activations of one graph layer. `layer` counts
/// graph layers from 0; the default is the last one before the readout.
AttributionMap gradcam(const GnnModel& model, const GraphTensor& g, std::optional<int> layer = std::nullopt,
                       std::optional<int> target = std::nullopt);

/// Encodes `smiles` with the model's features and attributes it.
AttributionMap explain(const GnnModel& model, const std::string& smiles, AttributionKind kind,
                       std::optional<int> layer = std::nullopt, std::optional<int> target = std::nullopt);

/// Deterministic 2D coordinates: stress majorization on ring-aware target
/// distances (ring members sit on regular polygons), bond length 1.
std::vector<std::pair<double, double>> layout_2d(const chem::Molecule& mol, std::uint64_t seed = 0);

struct SvgOptions {
  int width = 400;
  int height = 360;
  std::uint64_t seed = 0;
};

/// Atoms as circles filled on a diverging scale (green positive, purple
/// negative, white zero), bonds as lines, and a score legend.
std::string render_svg(const AttributionMap& map, const SvgOptions& options = {});

/// Fill colour for a score normalised to [-1, 1].
std::string diverging_color(double normalized);

/// CSV with columns atom_index, element, score.
void write_attribution_csv(const std::filesystem::path& path, const AttributionMap& map);

}  // namespace molgnn
