#include <cctype>
#include <map>
#include <set>
#include <string>
#include <utility>

#include "molgnn/chem/molecule.hpp"
#include "molgnn/error.hpp"

namespace molgnn::chem {
namespace {

struct PendingRing {
  int atom;
  std::optional<BondOrder> order;
};

class SmilesReader {
 public:
  explicit SmilesReader(std::string_view text) : text_(text) {}

  Molecule read() {
    if (text_.empty()) throw Error(ErrorCode::EmptyInput, "empty SMILES");
    for (char ch : text_) {
      if (static_cast<unsigned char>(ch) > 127)
        throw Error(ErrorCode::UnknownAtomToken, "non-ASCII character in SMILES");
    }
    std::vector<int> branch_stack;
    int prev = -1;
    std::optional<BondOrder> pending_bond;
    bool after_dot = false;

    while (pos_ < text_.size()) {
      const char ch = text_[pos_];
      if (ch == '(') {
        if (prev < 0) fail(ErrorCode::UnbalancedParenthesis, "branch without preceding atom");
        branch_stack.push_back(prev);
        ++pos_;
      } else if (ch == ')') {
        if (branch_stack.empty()) fail(ErrorCode::UnbalancedParenthesis, "unmatched ')'");
        if (pending_bond) fail(ErrorCode::InvalidBond, "bond symbol before ')'");
        prev = branch_stack.back();
        branch_stack.pop_back();
        ++pos_;
      } else if (ch == '.') {
        if (pending_bond) fail(ErrorCode::InvalidBond, "bond symbol before '.'");
        after_dot = true;
        prev = -1;
        ++pos_;
      } else if (is_bond_symbol(ch)) {
        if (pending_bond) fail(ErrorCode::InvalidBond, "consecutive bond symbols");
        pending_bond = read_bond();
      } else if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '%') {
        if (prev < 0) fail(ErrorCode::InvalidBond, "ring closure without atom");
        ring_closure(prev, read_ring_number(), pending_bond);
        pending_bond.reset();
      } else {
        const int atom = read_atom();
        if (prev >= 0) {
          add_bond(prev, atom, pending_bond);
        } else if (pending_bond) {
          fail(ErrorCode::InvalidBond, "bond symbol without preceding atom");
        }
        pending_bond.reset();
        prev = atom;
        after_dot = false;
      }
    }
    if (!branch_stack.empty()) fail(ErrorCode::UnbalancedParenthesis, "unclosed '('");
    if (pending_bond || after_dot) fail(ErrorCode::InvalidBond, "dangling bond or '.' at end");
    if (!open_rings_.empty()) {
      throw Error(ErrorCode::UnclosedRing,
                  "ring-closure digit " + std::to_string(open_rings_.begin()->first) +
                      " never paired");
    }
    return std::move(mol_);
  }

 private:
  [[noreturn]] void fail(ErrorCode code, const std::string& what) const {
    throw Error(code, what + " at position " + std::to_string(pos_));
  }

  static bool is_bond_symbol(char ch) {
    return ch == '-' || ch == '=' || ch == '#' || ch == ':' || ch == '/' || ch == '\\' ||
           ch == '$';
  }

  BondOrder read_bond() {
    const char ch = text_[pos_++];
    switch (ch) {
      case '-': return BondOrder::Single;
      case '=': return BondOrder::Double;
      case '#': return BondOrder::Triple;
      case ':': return BondOrder::Aromatic;
      case '/':
      case '\\':
        ++mol_.stereo_marks;
        return BondOrder::Single;
      default:
        --pos_;
        fail(ErrorCode::InvalidBond, std::string("unsupported bond symbol '") + ch + "'");
    }
  }

  int read_ring_number() {
    if (text_[pos_] == '%') {
      if (pos_ + 2 >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])) ||
          !std::isdigit(static_cast<unsigned char>(text_[pos_ + 2])))
        fail(ErrorCode::UnclosedRing, "malformed %nn ring number");
      const int n = (text_[pos_ + 1] - '0') * 10 + (text_[pos_ + 2] - '0');
      pos_ += 3;
      return n;
    }
    return text_[pos_++] - '0';
  }

  void ring_closure(int atom, int number, std::optional<BondOrder> order) {
    auto it = open_rings_.find(number);
    if (it == open_rings_.end()) {
      open_rings_.emplace(number, PendingRing{atom, order});
      return;
    }
    const PendingRing open = it->second;
    open_rings_.erase(it);
    std::optional<BondOrder> bond = order ? order : open.order;
    if (order && open.order && *order != *open.order)
      fail(ErrorCode::InvalidBond, "conflicting ring-closure bond orders");
    add_bond(open.atom, atom, bond);
  }

  void add_bond(int a, int b, std::optional<BondOrder> order) {
    if (a == b) fail(ErrorCode::InvalidBond, "atom bonded to itself");
    const auto key = std::minmax(a, b);
    if (!bond_pairs_.insert(key).second) fail(ErrorCode::InvalidBond, "duplicate bond");
    Bond bond;
    bond.src = a;
    bond.dst = b;
    if (order) {
      bond.order = *order;
    } else {
      const bool both_aromatic = mol_.atoms[a].aromatic && mol_.atoms[b].aromatic;
      bond.order = both_aromatic ? BondOrder::Aromatic : BondOrder::Single;
    }
    if (bond.order == BondOrder::Aromatic &&
        !(mol_.atoms[a].aromatic && mol_.atoms[b].aromatic))
      fail(ErrorCode::InvalidBond, "aromatic bond between non-aromatic atoms");
    bond.kekulized_order = bond.order;
    mol_.bonds.push_back(bond);
  }

  int push_atom(Atom atom) {
    atom.index = static_cast<int>(mol_.atoms.size());
    atom.element = element_from_symbol(atom.symbol);
    atom.atomic_number = atomic_number_of(atom.symbol);
    mol_.atoms.push_back(std::move(atom));
    return mol_.atoms.back().index;
  }

  int read_atom() {
    const char ch = text_[pos_];
    if (ch == '[') return read_bracket_atom();
    Atom atom;
    const auto rest = text_.substr(pos_);
    if (rest.starts_with("Cl")) {
      atom.symbol = "Cl";
      pos_ += 2;
    } else if (rest.starts_with("Br")) {
      atom.symbol = "Br";
      pos_ += 2;
    } else {
      switch (ch) {
        case 'B': case 'C': case 'N': case 'O': case 'P': case 'S': case 'F': case 'I':
          atom.symbol = std::string(1, ch);
          break;
        case 'b': case 'c': case 'n': case 'o': case 'p': case 's':
          atom.symbol = std::string(1, static_cast<char>(std::toupper(ch)));
          atom.aromatic = true;
          break;
        default:
          fail(ErrorCode::UnknownAtomToken, std::string("unknown atom token '") + ch + "'");
      }
      ++pos_;
    }
    return push_atom(std::move(atom));
  }

  int read_number() {
    int value = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      value = value * 10 + (text_[pos_++] - '0');
    }
    return value;
  }

  bool peek_digit() const {
    return pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]));
  }

  int read_bracket_atom() {
    const std::size_t start = pos_++;
    Atom atom;
    atom.bracket = true;
    if (peek_digit()) atom.isotope = read_number();
    if (pos_ >= text_.size()) fail(ErrorCode::UnknownAtomToken, "unterminated bracket atom");

    // Element symbol: aromatic two-letter forms first, then capitalized symbols.
    const auto rest = text_.substr(pos_);
    if (rest.starts_with("se") || rest.starts_with("as")) {
      atom.symbol = std::string(1, static_cast<char>(std::toupper(rest[0]))) + rest[1];
      atom.aromatic = true;
      pos_ += 2;
    } else if (std::islower(static_cast<unsigned char>(rest[0]))) {
      const char c = rest[0];
      if (c != 'b' && c != 'c' && c != 'n' && c != 'o' && c != 'p' && c != 's')
        fail(ErrorCode::UnknownAtomToken, "unknown aromatic bracket symbol");
      atom.symbol = std::string(1, static_cast<char>(std::toupper(c)));
      atom.aromatic = true;
      ++pos_;
    } else if (std::isupper(static_cast<unsigned char>(rest[0]))) {
      std::string two = rest.size() > 1 ? std::string(rest.substr(0, 2)) : std::string();
      if (two.size() == 2 && std::islower(static_cast<unsigned char>(two[1])) &&
          atomic_number_of(two) > 0) {
        atom.symbol = two;
        pos_ += 2;
      } else if (atomic_number_of(rest.substr(0, 1)) > 0) {
        atom.symbol = std::string(rest.substr(0, 1));
        ++pos_;
      } else {
        fail(ErrorCode::UnknownAtomToken, "unknown element in bracket atom");
      }
    } else {
      fail(ErrorCode::UnknownAtomToken, "bracket atom without element symbol");
    }

    // Chirality: @, @@, and @TH1/@AL2/@SP3/@TB10/@OH20 classes.
    if (pos_ < text_.size() && text_[pos_] == '@') {
      ++mol_.stereo_marks;
      ++pos_;
      if (pos_ < text_.size() && text_[pos_] == '@') {
        ++pos_;
      } else {
        const auto tail = text_.substr(pos_);
        for (std::string_view cls : {"TH", "AL", "SP", "TB", "OH"}) {
          if (tail.starts_with(cls)) {
            pos_ += 2;
            read_number();
            break;
          }
        }
      }
    }

    atom.explicit_h = 0;
    if (pos_ < text_.size() && text_[pos_] == 'H') {
      ++pos_;
      atom.explicit_h = peek_digit() ? read_number() : 1;
    }

    if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) {
      const char sign = text_[pos_++];
      int magnitude = 1;
      if (peek_digit()) {
        magnitude = read_number();
      } else {
        while (pos_ < text_.size() && text_[pos_] == sign) {
          ++magnitude;
          ++pos_;
        }
      }
      atom.formal_charge = sign == '+' ? magnitude : -magnitude;
    }

    if (pos_ < text_.size() && text_[pos_] == ':') {  // atom class
      ++pos_;
      if (!peek_digit()) fail(ErrorCode::UnknownAtomToken, "malformed atom class");
      read_number();
    }
    if (pos_ >= text_.size() || text_[pos_] != ']') {
      pos_ = start;
      fail(ErrorCode::UnknownAtomToken, "malformed bracket atom");
    }
    ++pos_;
    return push_atom(std::move(atom));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  Molecule mol_;
  std::map<int, PendingRing> open_rings_;
  std::set<std::pair<int, int>> bond_pairs_;
};

}  // namespace

Molecule parse_smiles_graph(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  return SmilesReader(text).read();
}

Molecule parse_smiles(std::string_view text) {
  Molecule mol = parse_smiles_graph(text);
  perceive_rings(mol);
  normalize_nitro(mol);
  kekulize(mol);
  assign_implicit_hydrogens(mol);
  perceive_bond_properties(mol);
  return mol;
}

}  // namespace molgnn::chem
