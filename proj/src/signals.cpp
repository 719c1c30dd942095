#include "obsform/signals.hpp"

#include <stdexcept>

#include "obsform/errors.hpp"

namespace obsform {

InputSignal InputSignal::constant(Eigen::VectorXd value) {
  InputSignal s;
  s.kind_ = Kind::Constant;
  s.channels_ = static_cast<int>(value.size());
  s.value_ = std::move(value);
  return s;
}

InputSignal InputSignal::piecewise(std::vector<double> times,
                                   std::vector<Eigen::VectorXd> values) {
  if (times.empty() || times.size() != values.size()) {
    throw ConfigError("piecewise signal needs matching times and values");
  }
  if (times.front() != 0.0) throw ConfigError("piecewise signal must start at t = 0");
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (times[k] <= times[k - 1]) throw ConfigError("piecewise times must increase");
    if (values[k].size() != values[0].size()) {
      throw ConfigError("piecewise segments must share the channel count");
    }
  }
  InputSignal s;
  s.kind_ = Kind::Piecewise;
  s.channels_ = static_cast<int>(values[0].size());
  s.times_ = std::move(times);
  s.values_ = std::move(values);
  return s;
}

InputSignal InputSignal::expression(const std::vector<std::string>& exprs) {
  static const std::vector<std::string> t_var = {"t"};
  InputSignal s;
  s.kind_ = Kind::Expression;
  s.channels_ = static_cast<int>(exprs.size());
  for (const std::string& text : exprs) {
    s.exprs_.push_back(parse_expression(text, t_var));
  }
  return s;
}

Eigen::VectorXd InputSignal::operator()(double t) const {
  switch (kind_) {
    case Kind::Constant:
      return value_;
    case Kind::Piecewise: {
      std::size_t k = 0;
      while (k + 1 < times_.size() && times_[k + 1] <= t) ++k;
      return values_[k];
    }
    case Kind::Expression: {
      Eigen::VectorXd out(channels_);
      const double tv[1] = {t};
      for (int j = 0; j < channels_; ++j) {
        out[j] = evaluate(exprs_[static_cast<std::size_t>(j)], tv);
      }
      return out;
    }
  }
  return Eigen::VectorXd();
}

}  // namespace obsform
