#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace molgnn::chem {

enum class Element : std::uint8_t { H, B, C, N, O, F, P, S, Cl, Br, I, Other };

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

/// Integer bond multiplicity; aromatic bonds must be kekulized first.
int bond_valence(BondOrder order);

struct Atom {
  Element element = Element::C;
  std::string symbol;  // as written, capitalized ("C", "Cl", "Se")
  int atomic_number = 6;
  int formal_charge = 0;
  std::optional<int> explicit_h;  // bracket atoms only
  std::optional<int> isotope;
  bool aromatic = false;
  bool bracket = false;
  int implicit_h = 0;
  int radical_electrons = 0;
  int index = 0;

  int total_h() const { return implicit_h + explicit_h.value_or(0); }
};

struct Bond {
  int src = 0;
  int dst = 0;
  BondOrder order = BondOrder::Single;
  BondOrder kekulized_order = BondOrder::Single;
  bool in_ring = false;
  bool conjugated = false;
  bool rotatable = false;

  int other(int atom) const { return atom == src ? dst : src; }
};

struct Molecule {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::vector<std::vector<int>> rings;  // atom cycles, minimal cycle basis
  int components = 0;
  int stereo_marks = 0;  // parsed and discarded stereo tokens

  /// Bond indices incident to each atom, in bond order.
  std::vector<std::vector<int>> adjacency() const;
  /// Heavy-atom degree (explicit graph neighbours).
  int degree(int atom) const;
  /// Smallest basis ring containing the atom, 0 when acyclic.
  int smallest_ring_of_atom(int atom) const;
  /// Smallest basis ring containing both endpoints consecutively, 0 when not a ring bond.
  int smallest_ring_of_bond(int bond) const;
  /// Hill-order formula including hydrogens, e.g. "C6H6".
  std::string formula() const;
};

int atomic_number_of(std::string_view symbol);
/// Periodic group count of valence electrons (main-group elements), -1 if unknown.
int valence_electrons(int atomic_number);
Element element_from_symbol(std::string_view symbol);

/// Admissible valences for an organic-subset element after charge adjustment
/// (isoelectronic shift: N+ behaves like C, O- like F, ...). Empty if unknown.
std::vector<int> allowed_valences(int atomic_number, int formal_charge);

/// Parses SMILES and runs full perception: ring basis, kekulization, implicit
/// hydrogens, conjugation, rotatability. Throws molgnn::Error.
Molecule parse_smiles(std::string_view text);

/// Connectivity-only parse; no perception. Exposed for perception unit tests.
Molecule parse_smiles_graph(std::string_view text);

std::vector<std::vector<int>> perceive_rings(Molecule& mol);
/// Rewrites neutral N(=O)=O and aromatic n=O in charge-separated form
/// ([N+](=O)[O-], [n+][O-]).
void normalize_nitro(Molecule& mol);
void kekulize(Molecule& mol);
void assign_implicit_hydrogens(Molecule& mol);
void perceive_bond_properties(Molecule& mol);

}  // namespace molgnn::chem
