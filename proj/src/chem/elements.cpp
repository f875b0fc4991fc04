#include "molgnn/chem/molecule.hpp"

#include <array>

namespace molgnn::chem {
namespace {

constexpr std::array<std::string_view, 87> kSymbols = {
    "",   "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si",
    "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu",
    "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru",
    "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr",
    "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",
    "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn"};

}  // namespace

int bond_valence(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return 1;
    case BondOrder::Double: return 2;
    case BondOrder::Triple: return 3;
    case BondOrder::Aromatic: return 1;
  }
  return 1;
}

int atomic_number_of(std::string_view symbol) {
  for (std::size_t z = 1; z < kSymbols.size(); ++z) {
    if (kSymbols[z] == symbol) return static_cast<int>(z);
  }
  return 0;
}

int valence_electrons(int z) {
  if (z <= 0) return -1;
  if (z <= 2) return z;
  // Main-group blocks; d-block elements report their group number.
  if (z <= 10) return z - 2;
  if (z <= 18) return z - 10;
  if (z <= 20) return z - 18;
  if (z <= 30) return z - 18;  // Sc=3 ... Zn=12
  if (z <= 36) return z - 28;  // Ga=3 ... Kr=8
  if (z <= 38) return z - 36;
  if (z <= 48) return z - 36;
  if (z <= 54) return z - 46;
  if (z <= 56) return z - 54;
  if (z <= 71) return 3;
  if (z <= 80) return z - 68;
  return z - 78;  // Tl=3 ... Rn=8
}

Element element_from_symbol(std::string_view s) {
  if (s == "H") return Element::H;
  if (s == "B") return Element::B;
  if (s == "C") return Element::C;
  if (s == "N") return Element::N;
  if (s == "O") return Element::O;
  if (s == "F") return Element::F;
  if (s == "P") return Element::P;
  if (s == "S") return Element::S;
  if (s == "Cl") return Element::Cl;
  if (s == "Br") return Element::Br;
  if (s == "I") return Element::I;
  return Element::Other;
}

std::vector<int> allowed_valences(int atomic_number, int formal_charge) {
  // Shift to the isoelectronic neutral element: N+ -> C, O- -> F, C- -> N.
  const int effective = atomic_number - formal_charge;
  switch (effective) {
    case 1: return {1};     // H
    case 5: return {3};     // B
    case 6: return {4};     // C
    case 7: return {3};     // N
    case 8: return {2};     // O
    case 9: return {1};     // F
    case 14: return {4};    // Si-like (P+)
    case 15: return {3, 5}; // P
    case 16: return {2, 4, 6};
    case 17: return {1};    // Cl
    case 35: return {1};    // Br
    case 53: return {1};    // I
    default: break;
  }
  return {};
}

}  // namespace molgnn::chem
