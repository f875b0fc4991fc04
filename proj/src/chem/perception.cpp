#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <queue>
#include <set>

#include "molgnn/chem/molecule.hpp"
#include "molgnn/error.hpp"

namespace molgnn::chem {

std::vector<std::vector<int>> Molecule::adjacency() const {
  std::vector<std::vector<int>> adj(atoms.size());
  for (std::size_t b = 0; b < bonds.size(); ++b) {
    adj[bonds[b].src].push_back(static_cast<int>(b));
    adj[bonds[b].dst].push_back(static_cast<int>(b));
  }
  return adj;
}

int Molecule::degree(int atom) const {
  return static_cast<int>(std::count_if(bonds.begin(), bonds.end(), [atom](const Bond& b) {
    return b.src == atom || b.dst == atom;
  }));
}

int Molecule::smallest_ring_of_atom(int atom) const {
  int best = 0;
  for (const auto& ring : rings) {
    if (std::find(ring.begin(), ring.end(), atom) == ring.end()) continue;
    const int size = static_cast<int>(ring.size());
    if (best == 0 || size < best) best = size;
  }
  return best;
}

int Molecule::smallest_ring_of_bond(int bond) const {
  const int a = bonds[bond].src;
  const int b = bonds[bond].dst;
  int best = 0;
  for (const auto& ring : rings) {
    const std::size_t n = ring.size();
    for (std::size_t k = 0; k < n; ++k) {
      const int u = ring[k];
      const int v = ring[(k + 1) % n];
      if ((u == a && v == b) || (u == b && v == a)) {
        if (best == 0 || static_cast<int>(n) < best) best = static_cast<int>(n);
        break;
      }
    }
  }
  return best;
}

std::string Molecule::formula() const {
  std::map<std::string, int> counts;
  for (const auto& atom : atoms) {
    counts[atom.symbol] += 1;
    if (atom.total_h() > 0) counts["H"] += atom.total_h();
  }
  std::string out;
  auto emit = [&out](const std::string& sym, int n) {
    out += sym;
    if (n > 1) out += std::to_string(n);
  };
  const bool has_carbon = counts.count("C") > 0;
  if (has_carbon) {
    emit("C", counts["C"]);
    counts.erase("C");
    if (counts.count("H")) {
      emit("H", counts["H"]);
      counts.erase("H");
    }
  }
  for (const auto& [sym, n] : counts) emit(sym, n);
  return out;
}

namespace {

using EdgeSet = std::vector<std::uint64_t>;

struct CycleCandidate {
  std::vector<int> atoms;
  EdgeSet edges;
};

int count_components(const Molecule& mol, const std::vector<std::vector<int>>& adj) {
  std::vector<int> seen(mol.atoms.size(), 0);
  int components = 0;
  for (std::size_t start = 0; start < mol.atoms.size(); ++start) {
    if (seen[start]) continue;
    ++components;
    std::vector<int> stack{static_cast<int>(start)};
    seen[start] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int b : adj[u]) {
        const int v = mol.bonds[b].other(u);
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
      }
    }
  }
  return components;
}

std::vector<int> canonical_cycle(std::vector<int> cycle) {
  const auto min_it = std::min_element(cycle.begin(), cycle.end());
  std::rotate(cycle.begin(), min_it, cycle.end());
  if (cycle.size() > 2 && cycle.back() < cycle[1]) std::reverse(cycle.begin() + 1, cycle.end());
  return cycle;
}

}  // namespace

std::vector<std::vector<int>> perceive_rings(Molecule& mol) {
  const int n = static_cast<int>(mol.atoms.size());
  const int m = static_cast<int>(mol.bonds.size());
  const auto adj = mol.adjacency();
  mol.components = count_components(mol, adj);
  mol.rings.clear();
  for (auto& bond : mol.bonds) bond.in_ring = false;

  const int basis_size = m - n + mol.components;
  const std::size_t words = static_cast<std::size_t>(m + 63) / 64;

  if (basis_size > 0) {
    // Horton candidates: for every root x and edge (u, v), the cycle formed by
    // the BFS-tree paths x->u, x->v and the edge, when those paths are disjoint.
    std::vector<CycleCandidate> candidates;
    std::set<EdgeSet> seen_sets;
    std::vector<std::vector<int>> sorted_adj(n);
    for (int u = 0; u < n; ++u) {
      sorted_adj[u] = adj[u];
      std::sort(sorted_adj[u].begin(), sorted_adj[u].end(), [&](int a, int b) {
        return mol.bonds[a].other(u) < mol.bonds[b].other(u);
      });
    }
    for (int root = 0; root < n; ++root) {
      std::vector<int> dist(n, -1), parent(n, -1), parent_bond(n, -1);
      std::queue<int> queue;
      dist[root] = 0;
      queue.push(root);
      while (!queue.empty()) {
        const int u = queue.front();
        queue.pop();
        for (int b : sorted_adj[u]) {
          const int v = mol.bonds[b].other(u);
          if (dist[v] >= 0) continue;
          dist[v] = dist[u] + 1;
          parent[v] = u;
          parent_bond[v] = b;
          queue.push(v);
        }
      }
      for (int b = 0; b < m; ++b) {
        const int u = mol.bonds[b].src;
        const int v = mol.bonds[b].dst;
        if (dist[u] < 0 || dist[v] < 0) continue;
        if (parent_bond[u] == b || parent_bond[v] == b) continue;
        auto path_to_root = [&](int from) {
          std::vector<int> path;
          for (int a = from; a != -1; a = parent[a]) path.push_back(a);
          return path;  // from ... root
        };
        const auto pu = path_to_root(u);
        const auto pv = path_to_root(v);
        std::set<int> on_u(pu.begin(), pu.end());
        bool simple = true;
        for (int a : pv) {
          if (a != root && on_u.count(a)) {
            simple = false;
            break;
          }
        }
        if (!simple) continue;
        CycleCandidate cand;
        cand.edges.assign(words, 0);
        auto mark = [&cand](int bond) { cand.edges[bond / 64] |= (std::uint64_t{1} << (bond % 64)); };
        mark(b);
        for (int a : pu) if (a != root) mark(parent_bond[a]);
        for (int a : pv) if (a != root) mark(parent_bond[a]);
        if (!seen_sets.insert(cand.edges).second) continue;
        cand.atoms.assign(pu.rbegin(), pu.rend());  // root ... u
        for (int a : pv) {
          if (a != root) cand.atoms.push_back(a);  // v ... child of root
        }
        candidates.push_back(std::move(cand));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const CycleCandidate& a, const CycleCandidate& b) {
                       return a.atoms.size() < b.atoms.size();
                     });

    // Greedy GF(2) independence selection.
    std::vector<std::pair<int, EdgeSet>> reduced;  // (pivot bit, row)
    auto lowest_bit = [words](const EdgeSet& row) {
      for (std::size_t w = 0; w < words; ++w) {
        if (row[w]) return static_cast<int>(w * 64 + __builtin_ctzll(row[w]));
      }
      return -1;
    };
    for (auto& cand : candidates) {
      if (static_cast<int>(mol.rings.size()) == basis_size) break;
      EdgeSet row = cand.edges;
      for (const auto& [pivot, basis_row] : reduced) {
        if (row[pivot / 64] & (std::uint64_t{1} << (pivot % 64))) {
          for (std::size_t w = 0; w < words; ++w) row[w] ^= basis_row[w];
        }
      }
      const int pivot = lowest_bit(row);
      if (pivot < 0) continue;
      // Keep rows fully reduced against each other so pivots stay unique.
      for (auto& [other_pivot, other_row] : reduced) {
        if (other_row[pivot / 64] & (std::uint64_t{1} << (pivot % 64))) {
          for (std::size_t w = 0; w < words; ++w) other_row[w] ^= row[w];
        }
      }
      reduced.emplace_back(pivot, row);
      for (int b = 0; b < m; ++b) {
        if (cand.edges[b / 64] & (std::uint64_t{1} << (b % 64))) mol.bonds[b].in_ring = true;
      }
      mol.rings.push_back(canonical_cycle(cand.atoms));
    }
  }

  // Aromaticity is only meaningful inside rings.
  for (auto& bond : mol.bonds) {
    if (bond.order == BondOrder::Aromatic && !bond.in_ring) {
      bond.order = BondOrder::Single;
      bond.kekulized_order = BondOrder::Single;
    }
  }
  for (const auto& atom : mol.atoms) {
    if (atom.aromatic && mol.smallest_ring_of_atom(atom.index) == 0) {
      throw Error(ErrorCode::KekulizationFailure,
                  "aromatic atom " + std::to_string(atom.index) + " is not in a ring");
    }
  }
  return mol.rings;
}

namespace {

int smallest_at_least(const std::vector<int>& allowed, int used) {
  for (int v : allowed) {
    if (v >= used) return v;
  }
  return -1;
}

/// Valence an aromatic atom must reach; unknown elements fall back to the
/// octet rule on their group electron count.
std::vector<int> valence_table(const Atom& atom) {
  auto allowed = allowed_valences(atom.atomic_number, atom.formal_charge);
  if (allowed.empty()) {
    const int ve = valence_electrons(atom.atomic_number) - atom.formal_charge;
    if (ve >= 4 && ve <= 7) allowed = {8 - ve};
    else if (ve >= 1 && ve <= 3) allowed = {ve};
  }
  return allowed;
}

}  // namespace

void normalize_nitro(Molecule& mol) {
  const auto adj = mol.adjacency();
  for (auto& atom : mol.atoms) {
    if (atom.element != Element::N || atom.bracket || atom.formal_charge != 0) continue;
    std::vector<int> oxo;
    int bond_sum = 0;
    for (int b : adj[atom.index]) {
      const auto& bond = mol.bonds[b];
      bond_sum += bond_valence(bond.order);
      const auto& other = mol.atoms[bond.other(atom.index)];
      if (bond.order == BondOrder::Double && other.element == Element::O && other.formal_charge == 0)
        oxo.push_back(b);
    }
    // Nitro N(=O)=O and aromatic N-oxide n=O.
    const bool nitro = !atom.aromatic && bond_sum == 5 && oxo.size() == 2;
    const bool n_oxide = atom.aromatic && oxo.size() == 1;
    if (!nitro && !n_oxide) continue;
    auto& bond = mol.bonds[oxo.back()];
    bond.order = bond.kekulized_order = BondOrder::Single;
    atom.formal_charge = 1;
    mol.atoms[bond.other(atom.index)].formal_charge = -1;
  }
}

void kekulize(Molecule& mol) {
  const int n = static_cast<int>(mol.atoms.size());
  const auto adj = mol.adjacency();
  std::vector<char> needs(n, 0);
  for (const auto& atom : mol.atoms) {
    if (!atom.aromatic) continue;
    int used = atom.explicit_h.value_or(0);
    for (int b : adj[atom.index]) {
      const auto& bond = mol.bonds[b];
      used += bond.order == BondOrder::Aromatic ? 1 : bond_valence(bond.order);
    }
    const int target = smallest_at_least(valence_table(atom), used);
    if (target < 0) {
      throw Error(ErrorCode::ValenceViolation,
                  "aromatic atom " + std::to_string(atom.index) + " exceeds allowed valence");
    }
    // Organic-subset atoms may absorb the remainder as implicit H, but one
    // unit always goes to the pi system when available.
    if (target - used >= 1) needs[atom.index] = 1;
  }

  std::vector<int> mate(n, -1);
  std::vector<int> mate_bond(n, -1);
  auto candidates_of = [&](int u) {
    std::vector<int> out;
    for (int b : adj[u]) {
      const auto& bond = mol.bonds[b];
      if (bond.order != BondOrder::Aromatic) continue;
      const int v = bond.other(u);
      if (needs[v] && mate[v] < 0) out.push_back(b);
    }
    return out;
  };

  std::function<bool()> solve = [&]() -> bool {
    int best = -1;
    std::size_t best_count = 0;
    for (int u = 0; u < n; ++u) {
      if (!needs[u] || mate[u] >= 0) continue;
      const std::size_t count = candidates_of(u).size();
      if (best < 0 || count < best_count) {
        best = u;
        best_count = count;
        if (count == 0) break;
      }
    }
    if (best < 0) return true;
    if (best_count == 0) return false;
    for (int b : candidates_of(best)) {
      const int v = mol.bonds[b].other(best);
      mate[best] = v;
      mate[v] = best;
      mate_bond[best] = mate_bond[v] = b;
      if (solve()) return true;
      mate[best] = mate[v] = -1;
      mate_bond[best] = mate_bond[v] = -1;
    }
    return false;
  };

  if (!solve()) {
    throw Error(ErrorCode::KekulizationFailure, "no alternating assignment for aromatic system");
  }

  // Rings made only of aromatic atoms must not carry 4n pi electrons.
  auto pi_electrons = [&](const Atom& atom) {
    if (mate[atom.index] >= 0) return 1;
    for (int b : adj[atom.index]) {
      if (mol.bonds[b].order == BondOrder::Double) return 0;
    }
    return valence_electrons(atom.atomic_number) - atom.formal_charge >= 5 ? 2 : 0;
  };
  for (const auto& ring : mol.rings) {
    int electrons = 0;
    bool all_aromatic = true;
    for (int a : ring) {
      all_aromatic = all_aromatic && mol.atoms[a].aromatic;
      electrons += pi_electrons(mol.atoms[a]);
    }
    if (all_aromatic && electrons % 4 == 0) {
      throw Error(ErrorCode::KekulizationFailure,
                  "aromatic ring with " + std::to_string(electrons) + " pi electrons");
    }
  }
  for (std::size_t b = 0; b < mol.bonds.size(); ++b) {
    auto& bond = mol.bonds[b];
    if (bond.order != BondOrder::Aromatic) {
      bond.kekulized_order = bond.order;
    } else {
      bond.kekulized_order =
          mate_bond[bond.src] == static_cast<int>(b) ? BondOrder::Double : BondOrder::Single;
    }
  }
}

void assign_implicit_hydrogens(Molecule& mol) {
  const auto adj = mol.adjacency();
  for (auto& atom : mol.atoms) {
    int bond_sum = 0;
    for (int b : adj[atom.index]) bond_sum += bond_valence(mol.bonds[b].kekulized_order);
    atom.implicit_h = 0;
    atom.radical_electrons = 0;
    if (atom.bracket) {
      const int h = atom.explicit_h.value_or(0);
      const auto allowed = allowed_valences(atom.atomic_number, atom.formal_charge);
      if (allowed.empty()) continue;
      if (bond_sum + h > allowed.back()) {
        throw Error(ErrorCode::ValenceViolation,
                    "atom " + std::to_string(atom.index) + " (" + atom.symbol + ") has valence " +
                        std::to_string(bond_sum + h));
      }
      if (atom.formal_charge == 0) {
        const int target = smallest_at_least(allowed, bond_sum + h);
        atom.radical_electrons = std::max(0, target - bond_sum - h);
      }
      continue;
    }
    const auto allowed = allowed_valences(atom.atomic_number, atom.formal_charge);
    const int target = smallest_at_least(allowed, bond_sum);
    if (target < 0) {
      throw Error(ErrorCode::ValenceViolation,
                  "atom " + std::to_string(atom.index) + " (" + atom.symbol + ") has valence " +
                      std::to_string(bond_sum));
    }
    atom.implicit_h = target - bond_sum;
  }
}

void perceive_bond_properties(Molecule& mol) {
  const auto adj = mol.adjacency();
  auto is_multiple = [](const Bond& b) { return b.order != BondOrder::Single; };
  auto other_multiple_at = [&](int atom, int self) {
    for (int b : adj[atom]) {
      if (b != self && is_multiple(mol.bonds[b])) return true;
    }
    return false;
  };
  // Single bonds first: a multiple bond is conjugated when it meets another
  // multiple bond at a shared atom, directly or through a conjugated single bond.
  for (std::size_t i = 0; i < mol.bonds.size(); ++i) {
    auto& bond = mol.bonds[i];
    const int self = static_cast<int>(i);
    if (bond.order == BondOrder::Aromatic) {
      bond.conjugated = true;
    } else if (bond.order == BondOrder::Single) {
      bond.conjugated = other_multiple_at(bond.src, self) && other_multiple_at(bond.dst, self);
    }
  }
  for (std::size_t i = 0; i < mol.bonds.size(); ++i) {
    auto& bond = mol.bonds[i];
    if (bond.order != BondOrder::Double && bond.order != BondOrder::Triple) continue;
    const int self = static_cast<int>(i);
    bool conjugated = other_multiple_at(bond.src, self) || other_multiple_at(bond.dst, self);
    for (int end : {bond.src, bond.dst}) {
      for (int b : adj[end]) {
        if (b != self && mol.bonds[b].order == BondOrder::Single && mol.bonds[b].conjugated)
          conjugated = true;
      }
    }
    bond.conjugated = conjugated;
  }
  for (auto& bond : mol.bonds) {
    bond.rotatable = bond.order == BondOrder::Single && !bond.in_ring &&
                     adj[bond.src].size() >= 2 && adj[bond.dst].size() >= 2;
  }
}

}  // namespace molgnn::chem
