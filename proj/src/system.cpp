#include "obsform/system.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "obsform/errors.hpp"

namespace obsform {

namespace detail {
Expr parse_expression_at(std::string_view text, std::span<const std::string> state_names,
                         std::span<const std::string> input_names, int base_line);
}

Eigen::VectorXd ControlAffineSystem::eval_f(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(n);
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (int i = 0; i < n; ++i) out[i] = evaluate(f[static_cast<std::size_t>(i)], xs);
  return out;
}

Eigen::MatrixXd ControlAffineSystem::eval_g(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd out(n, m);
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out(i, j) = evaluate(g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], xs);
  return out;
}

Eigen::VectorXd ControlAffineSystem::eval_rhs(const Eigen::VectorXd& x,
                                              const Eigen::VectorXd& u) const {
  return eval_f(x) + eval_g(x) * u;
}

double ControlAffineSystem::eval_h(const Eigen::VectorXd& x) const {
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  return evaluate(h, xs);
}

std::string ControlAffineSystem::canonical_text() const {
  std::ostringstream os;
  os << "system " << name << "\nstates";
  for (const auto& s : state_names) os << " " << s;
  os << "\ninputs";
  for (const auto& s : input_names) os << " " << s;
  os << "\nf = [";
  for (int i = 0; i < n; ++i) os << (i ? ", " : "") << to_string(f[static_cast<std::size_t>(i)]);
  os << "]\ng = [";
  for (int i = 0; i < n; ++i) {
    os << (i ? ", [" : "[");
    for (int j = 0; j < m; ++j)
      os << (j ? ", " : "") << to_string(g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    os << "]";
  }
  os << "]\nh = " << to_string(h) << "\n";
  return os.str();
}

std::uint64_t ControlAffineSystem::hash() const {
  // FNV-1a over the canonical text
  std::uint64_t h64 = 1469598103934665603ull;
  for (const char c : canonical_text()) {
    h64 ^= static_cast<unsigned char>(c);
    h64 *= 1099511628211ull;
  }
  return h64;
}

namespace {

struct Statement {
  std::string keyword;
  std::string payload;
  int line = 1;  // line the keyword starts on
};

bool valid_identifier(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

// Splits a comma-separated list at paren depth zero.
std::vector<std::string> split_top_level(const std::string& text) {
  std::vector<std::string> parts;
  int depth = 0;
  std::string cur;
  for (const char c : text) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Extracts the bracketed body "[...]" allowing nested brackets.
std::string strip_brackets(const std::string& text, int line) {
  const std::string t = trim(text);
  if (t.empty() || t.front() != '[' || t.back() != ']') {
    throw ParseError("expected a bracketed list", line, 0);
  }
  return t.substr(1, t.size() - 2);
}

std::vector<std::string> split_rows(const std::string& body, int line) {
  // body is "[...], [...], ..." at depth zero of square brackets
  std::vector<std::string> rows;
  int depth = 0;
  std::string cur;
  for (const char c : body) {
    if (c == '[') {
      if (depth == 0) {
        cur.clear();
        ++depth;
        continue;
      }
      ++depth;
    } else if (c == ']') {
      --depth;
      if (depth == 0) {
        rows.push_back(cur);
        continue;
      }
    } else if (depth == 0) {
      if (!std::isspace(static_cast<unsigned char>(c)) && c != ',') {
        throw ParseError("malformed matrix row list", line, 0);
      }
      continue;
    }
    cur.push_back(c);
  }
  if (depth != 0) throw ParseError("unbalanced brackets in matrix", line, 0);
  return rows;
}

std::vector<Statement> split_statements(std::string_view text) {
  static const std::vector<std::string> keywords = {"system", "states", "inputs", "f", "g", "h"};
  std::vector<Statement> out;
  std::istringstream is{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::size_t hash_pos = raw.find('#');
    if (hash_pos != std::string::npos) raw.erase(hash_pos);
    std::string line = trim(raw);
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    const bool is_keyword = std::find(keywords.begin(), keywords.end(), first) != keywords.end();
    if (is_keyword) {
      Statement st;
      st.keyword = first;
      std::string rest;
      std::getline(ls, rest);
      st.payload = trim(rest);
      st.line = lineno;
      out.push_back(std::move(st));
    } else if (!out.empty()) {
      out.back().payload += " " + line;  // continuation line
    } else {
      throw ParseError("unexpected content '" + first + "'", lineno, 1);
    }
  }
  return out;
}

std::string strip_equals(const Statement& st) {
  std::string p = trim(st.payload);
  if (p.empty() || p.front() != '=') {
    throw ParseError("expected '=' after '" + st.keyword + "'", st.line, 0);
  }
  return trim(p.substr(1));
}

}  // namespace

ControlAffineSystem parse_system(std::string_view text) {
  ControlAffineSystem sys;
  bool saw_system = false, saw_states = false, saw_inputs = false;
  bool saw_f = false, saw_g = false, saw_h = false;
  std::string f_body, h_body;
  std::vector<std::string> g_rows;
  int f_line = 1, g_line = 1, h_line = 1;

  for (const Statement& st : split_statements(text)) {
    if (st.keyword == "system") {
      if (saw_system) throw ParseError("duplicate 'system' line", st.line, 1);
      sys.name = trim(st.payload);
      if (!valid_identifier(sys.name))
        throw ParseError("invalid system name '" + sys.name + "'", st.line, 1);
      saw_system = true;
    } else if (st.keyword == "states" || st.keyword == "inputs") {
      auto& names = st.keyword == "states" ? sys.state_names : sys.input_names;
      bool& seen = st.keyword == "states" ? saw_states : saw_inputs;
      if (seen) throw ParseError("duplicate '" + st.keyword + "' line", st.line, 1);
      seen = true;
      std::istringstream ns(st.payload);
      std::string nm;
      while (ns >> nm) {
        if (!valid_identifier(nm))
          throw ParseError("invalid variable name '" + nm + "'", st.line, 1);
        names.push_back(nm);
      }
      if (names.empty())
        throw ParseError("'" + st.keyword + "' declares no variables", st.line, 1);
    } else if (st.keyword == "f") {
      f_body = strip_equals(st);
      f_line = st.line;
      saw_f = true;
    } else if (st.keyword == "g") {
      g_rows = split_rows(strip_brackets(strip_equals(st), st.line), st.line);
      g_line = st.line;
      saw_g = true;
    } else if (st.keyword == "h") {
      h_body = strip_equals(st);
      h_line = st.line;
      saw_h = true;
    }
  }

  if (!saw_system) throw ParseError("missing 'system' line", 1, 1);
  if (!saw_states) throw ParseError("missing 'states' line", 1, 1);
  if (!saw_inputs) throw ParseError("missing 'inputs' line", 1, 1);
  if (!saw_f || !saw_g || !saw_h) throw ParseError("system file needs f, g and h", 1, 1);

  sys.n = static_cast<int>(sys.state_names.size());
  sys.m = static_cast<int>(sys.input_names.size());

  std::vector<std::string> all_names = sys.state_names;
  all_names.insert(all_names.end(), sys.input_names.begin(), sys.input_names.end());
  std::sort(all_names.begin(), all_names.end());
  if (std::adjacent_find(all_names.begin(), all_names.end()) != all_names.end()) {
    throw ParseError("duplicate variable name", 1, 1);
  }

  auto parse_state_expr = [&](const std::string& body, int line,
                              const std::string& where) -> Expr {
    Expr e = detail::parse_expression_at(body, sys.state_names, sys.input_names, line);
    if (references_input(e)) {
      throw ParseError("input variables are not allowed in " + where +
                           " (control-affine structure)",
                       line, 0);
    }
    return e;
  };

  const auto f_entries = split_top_level(strip_brackets(f_body, f_line));
  if (static_cast<int>(f_entries.size()) != sys.n) {
    throw ParseError("f has " + std::to_string(f_entries.size()) + " entries but " +
                         std::to_string(sys.n) + " states are declared",
                     f_line, 0);
  }
  for (const auto& entry : f_entries) sys.f.push_back(parse_state_expr(entry, f_line, "f"));

  if (static_cast<int>(g_rows.size()) != sys.n) {
    throw ParseError("g has " + std::to_string(g_rows.size()) + " rows but " +
                         std::to_string(sys.n) + " states are declared",
                     g_line, 0);
  }
  for (const auto& row : g_rows) {
    const auto cols = split_top_level(row);
    if (static_cast<int>(cols.size()) != sys.m) {
      throw ParseError("g row has " + std::to_string(cols.size()) + " entries but " +
                           std::to_string(sys.m) + " inputs are declared",
                       g_line, 0);
    }
    std::vector<Expr> grow;
    for (const auto& entry : cols) grow.push_back(parse_state_expr(entry, g_line, "g"));
    sys.g.push_back(std::move(grow));
  }

  sys.h = parse_state_expr(h_body, h_line, "h");
  return sys;
}

ControlAffineSystem load_system(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open system file '" + path + "'", 0, 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_system(buf.str());
}

}  // namespace obsform
