#pragma once

#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "classo/csv.hpp"
#include "classo/panel.hpp"

namespace classo {

/// One unit's raw outcome history in calendar periods.
struct UnitHistory {
  std::string unit_id;
  std::vector<int> outcome;
  Index birth_period = 0;                    // index into `outcome` that becomes t = 0
  std::optional<Index> second_birth_period;  // index into `outcome`
};

/// Which coefficients are common to all units and which follow the latent groups.
enum class DesignModel {
  Benchmark,  // everything common
  Mixed,      // lag and second child common, child-age phases group-specific
  Full,       // everything group-specific
};

struct PhaseInterval {
  int first_month;
  int last_month;
};

struct EmploymentDesignSpec {
  // The last interval is the omitted reference category.
  std::vector<PhaseInterval> phase_breaks = {{1, 14}, {15, 24}, {25, 59}, {60, 72}};
  bool include_lag = true;
  bool include_second_child = true;
  DesignModel model = DesignModel::Mixed;

  int last_month() const { return phase_breaks.empty() ? 0 : phase_breaks.back().last_month; }
};

inline std::string phase_column_name(const PhaseInterval& iv) {
  return "child_m" + std::to_string(iv.first_month) + "_m" + std::to_string(iv.last_month);
}

/// 1-based index of the interval containing `month`, or 0 when none does.
inline int phase_of_month(const EmploymentDesignSpec& spec, int month) {
  for (std::size_t j = 0; j < spec.phase_breaks.size(); ++j)
    if (month >= spec.phase_breaks[j].first_month && month <= spec.phase_breaks[j].last_month)
      return static_cast<int>(j) + 1;
  return 0;
}

/// Aligns every unit at its first birth (t = 0) and emits months 0..last_month.
/// Period 0 only supplies the initial condition; the likelihood window is 1..last_month.
inline BalancedPanel build_employment_design(const std::vector<UnitHistory>& raw, const EmploymentDesignSpec& spec) {
  if (raw.empty()) fail(ErrorKind::InvalidArgument, "no unit histories");
  if (spec.phase_breaks.size() < 2) fail(ErrorKind::InvalidArgument, "need at least one phase plus the reference");
  for (std::size_t j = 0; j < spec.phase_breaks.size(); ++j) {
    const auto& iv = spec.phase_breaks[j];
    if (iv.first_month > iv.last_month || iv.first_month < 1)
      fail(ErrorKind::InvalidArgument, "phase interval " + std::to_string(j + 1) + " is empty or starts before month 1");
    if (j > 0 && iv.first_month <= spec.phase_breaks[j - 1].last_month)
      fail(ErrorKind::InvalidArgument, "phase intervals must be disjoint and ordered");
  }
  const int months = spec.last_month() + 1;
  for (int m = 1; m < months; ++m)
    if (phase_of_month(spec, m) == 0)
      fail(ErrorKind::PhaseOutOfRange, "month " + std::to_string(m) + " falls in no phase interval");

  const std::size_t n_phase_cols = spec.phase_breaks.size() - 1;
  std::vector<std::string> lag_names, child_names, phase_names;
  if (spec.include_lag) lag_names.push_back("employ_lag");
  if (spec.include_second_child) child_names.push_back("child_2nd");
  for (std::size_t j = 0; j < n_phase_cols; ++j) phase_names.push_back(phase_column_name(spec.phase_breaks[j]));

  // Stacked column order: lag, second child, phases; routed by model.
  std::vector<std::string> all = lag_names;
  all.insert(all.end(), child_names.begin(), child_names.end());
  all.insert(all.end(), phase_names.begin(), phase_names.end());
  std::size_t n_common = 0;
  switch (spec.model) {
    case DesignModel::Benchmark: n_common = all.size(); break;
    case DesignModel::Mixed: n_common = lag_names.size() + child_names.size(); break;
    case DesignModel::Full: n_common = 0; break;
  }

  BalancedPanel p;
  const auto n = static_cast<Index>(raw.size());
  p.common_names.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_common));
  p.group_names.assign(all.begin() + static_cast<std::ptrdiff_t>(n_common), all.end());
  for (int m = 0; m < months; ++m) p.periods.push_back(m);
  p.y.resize(n, months);
  p.phase.resize(n, months);
  for (Index i = 0; i < n; ++i) {
    const auto& h = raw[i];
    if (h.birth_period < 0 || h.birth_period + months > static_cast<Index>(h.outcome.size()))
      fail(ErrorKind::UnbalancedPanel, "history of unit " + h.unit_id + " does not cover months 0.." +
                                           std::to_string(months - 1) + " after birth");
    Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(months, static_cast<Index>(all.size()));
    for (int m = 0; m < months; ++m) {
      const Index cal = h.birth_period + m;
      const int yv = h.outcome[cal];
      if (yv != 0 && yv != 1) fail(ErrorKind::NonBinaryOutcome, "unit " + h.unit_id + " has a non-binary outcome");
      p.y(i, m) = yv;
      Index c = 0;
      if (spec.include_lag) cols(m, c++) = cal > 0 ? h.outcome[cal - 1] : 0.0;
      if (spec.include_second_child)
        cols(m, c++) = (h.second_birth_period && cal >= *h.second_birth_period) ? 1.0 : 0.0;
      const int ph = phase_of_month(spec, m);
      p.phase(i, m) = ph;
      if (ph >= 1 && static_cast<std::size_t>(ph) <= n_phase_cols) cols(m, c + ph - 1) = 1.0;
    }
    p.unit_ids.push_back(h.unit_id);
    p.x_common.push_back(cols.leftCols(static_cast<Index>(n_common)));
    p.x_group.push_back(cols.rightCols(static_cast<Index>(all.size() - n_common)));
  }
  p.window = {1, months};
  p.validate();
  return p;
}

struct HistorySchema {
  std::string unit = "unit";
  std::string period = "period";
  std::string outcome = "employ";
  std::string first_birth = "first_birth";    // 1 in the month of the first birth
  std::string second_birth = "second_birth";  // 1 in the month of a second birth (optional column)
  char delimiter = ',';
};

/// Reads calendar-time histories: one row per unit-period with birth event flags.
/// `birth_labels`, when given, receives each unit's calendar period label of the first birth.
inline std::vector<UnitHistory> load_histories(std::istream& in, const HistorySchema& schema,
                                               std::map<std::string, long long>* birth_labels = nullptr) {
  const auto table = csv::read_table(in, schema.delimiter);
  auto col = [&](const std::string& name, bool required) {
    const auto c = table.column(name);
    if (c < 0 && required) fail(ErrorKind::InvalidArgument, "column '" + name + "' not found in header");
    return c;
  };
  const auto c_unit = col(schema.unit, true), c_per = col(schema.period, true), c_y = col(schema.outcome, true),
             c_b1 = col(schema.first_birth, true), c_b2 = col(schema.second_birth, false);
  struct Row {
    long long period;
    int y, b1, b2;
  };
  std::map<std::string, std::map<long long, Row>> by_unit;
  for (const auto& row : table.rows) {
    long long per, yv, b1, b2 = 0;
    if (!detail::parse_integer(row[c_per], per) || !detail::parse_integer(row[c_y], yv) ||
        !detail::parse_integer(row[c_b1], b1) || (c_b2 >= 0 && !detail::parse_integer(row[c_b2], b2)))
      fail(ErrorKind::MissingValue, "unit " + row[c_unit] + ": unparseable history row");
    if (!by_unit[row[c_unit]].emplace(per, Row{per, static_cast<int>(yv), static_cast<int>(b1), static_cast<int>(b2)}).second)
      fail(ErrorKind::DuplicateCell, "unit " + row[c_unit] + " period " + std::to_string(per) + " appears twice");
  }
  std::vector<std::string> ids;
  for (const auto& [id, _] : by_unit) ids.push_back(id);
  detail::sort_unit_ids(ids);

  std::vector<UnitHistory> out;
  for (const auto& id : ids) {
    const auto& rows = by_unit.at(id);
    UnitHistory h;
    h.unit_id = id;
    std::optional<Index> birth;
    long long prev = 0;
    bool first = true;
    for (const auto& [per, r] : rows) {
      if (!first && per != prev + 1) fail(ErrorKind::UnbalancedPanel, "unit " + id + " has a gap in its history");
      first = false;
      prev = per;
      const auto idx = static_cast<Index>(h.outcome.size());
      h.outcome.push_back(r.y);
      if (r.b1 == 1 && !birth) {
        birth = idx;
        if (birth_labels) (*birth_labels)[id] = per;
      }
      if (r.b2 == 1 && !h.second_birth_period) h.second_birth_period = idx;
    }
    if (!birth) fail(ErrorKind::MissingValue, "unit " + id + " has no first-birth month");
    h.birth_period = *birth;
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace classo
