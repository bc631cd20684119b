#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ortk/errors.hpp"
#include "ortk/fpe.hpp"
#include "ortk/grid.hpp"
#include "ortk/response.hpp"
#include "ortk/wavelet.hpp"

namespace ortk {

/* Every experiment scalar in one flat bag.  Defaults are the symmetric
 * double-well experiment on the coarse profile (dx = 8e-3, dt = 2e-3); the
 * full-resolution profile is the same config with n = 2000. */
struct ExperimentConfig {
    std::string potential = "double_well";   // double_well | quadratic | tabulated
    double curvature = 1.0;                  // quadratic well stiffness
    std::string potential_file;              // tabulated V' as CSV rows "y,dV"
    double eps = 0.25;                       // noise amplitude
    double T = 1.0;                          // operator time horizon
    double a = 2.0;                          // state-space half-width
    double d = 1.2;                          // perturbation-domain half-width
    std::size_t n = 500;                     // space intervals
    std::size_t m = 500;                     // time steps
    unsigned I = 35;                         // max x-frequency of the basis
    unsigned J = 35;                         // max y-frequency of the basis
    std::vector<double> delta = {0.5};       // perturbation strengths to study
    std::string observable = "gaussian";     // gaussian | tabulated
    double observable_mean = 0.0;
    double observable_sigma = 0.1;
    std::string observable_file;             // tabulated phi as CSV rows "y,phi"
    std::string constraint_axis = "zero_mean_in_x";
    std::uint64_t seed = 12345;
    unsigned threads = 0;                    // 0 = all available cores
    double dirac_sigma = 0.0;                // absolute surrogate width; 0 = factor * dx
    double dirac_factor = 100.0;
    double mass_tol = 1e-3;                  // density mass-drift audit
    double row_mass_lo = 0.99;               // base-kernel row-mass band
    double row_mass_hi = 1.01;
    double positivity_floor = -1e-8;
    double eigen_tol = 1e-10;                // power-iteration direction residual
    std::size_t eigen_max_iters = 200000;
    double rcond_floor = 1e-13;              // resolvent conditioning gate
    double residual_tol = 1e-10;             // resolvent solve residual
    double response_mass_warn = 0.05;        // |int R| / ||R||_1 warning level
    std::string output_dir = "out";

    bool operator==(const ExperimentConfig&) const = default;

    double dx() const { return 2.0 * a / static_cast<double>(n); }
    double dt() const { return T / static_cast<double>(m); }
    double sigma() const { return dirac_sigma > 0.0 ? dirac_sigma : dirac_factor * dx(); }

    UniformGrid1D make_grid() const { return build_grid(a, n); }
    TimeGrid make_time_grid() const { return build_time_grid(T, m); }

    PotentialSpec make_potential() const;
    ObservableSpec make_observable() const;
    ConstraintAxis make_axis() const {
        if (constraint_axis == "zero_mean_in_x") return ConstraintAxis::zero_mean_in_x;
        if (constraint_axis == "zero_mean_in_y") return ConstraintAxis::zero_mean_in_y;
        throw ConfigError("constraint_axis must be zero_mean_in_x or zero_mean_in_y, got '" +
                          constraint_axis + "'");
    }

    void validate() const;
    std::string serialize() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double_value(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v))
        throw ConfigError("config key '" + key + "' needs a finite number, got '" + s + "'");
    return v;
}

inline std::uint64_t parse_uint_value(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE || s.find('-') != std::string::npos)
        throw ConfigError("config key '" + key + "' needs a nonnegative integer, got '" + s +
                          "'");
    return v;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_double_value(key, item));
    }
    return out;
}

/* CSV with two numeric columns; '#' lines are comments. */
inline std::pair<std::vector<double>, std::vector<double>> load_two_column_csv(
    const std::string& path, const std::string& what) {
    std::ifstream is(path);
    if (!is) throw ConfigError(what + " file not readable: " + path);
    std::vector<double> c0, c1;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ConfigError(what + " file " + path + " line " + std::to_string(lineno) +
                              ": expected 'value,value'");
        c0.push_back(parse_double_value(what, trim(line.substr(0, comma))));
        c1.push_back(parse_double_value(what, trim(line.substr(comma + 1))));
    }
    if (c0.size() < 2) throw ConfigError(what + " file " + path + " has fewer than 2 rows");
    return {std::move(c0), std::move(c1)};
}

}  // namespace detail

inline PotentialSpec ExperimentConfig::make_potential() const {
    if (potential == "double_well") return PotentialSpec::double_well();
    if (potential == "quadratic") return PotentialSpec::quadratic(curvature);
    if (potential == "tabulated") {
        if (potential_file.empty())
            throw ConfigError("potential = tabulated requires potential_file");
        auto [y, dv] = detail::load_two_column_csv(potential_file, "potential");
        return PotentialSpec::tabulated(std::move(y), std::move(dv));
    }
    throw ConfigError("potential must be double_well, quadratic or tabulated, got '" +
                      potential + "'");
}

inline ObservableSpec ExperimentConfig::make_observable() const {
    if (observable == "gaussian")
        return ObservableSpec::gaussian(observable_mean, observable_sigma);
    if (observable == "tabulated") {
        if (observable_file.empty())
            throw ConfigError("observable = tabulated requires observable_file");
        auto [y, phi] = detail::load_two_column_csv(observable_file, "observable");
        return ObservableSpec::tabulated(std::move(y), std::move(phi));
    }
    throw ConfigError("observable must be gaussian or tabulated, got '" + observable + "'");
}

inline void ExperimentConfig::validate() const {
    if (n < 2 || n % 2 != 0)
        throw ConfigError("n must be even and >= 2 (got " + std::to_string(n) + ")");
    if (m == 0) throw ConfigError("m must be >= 1");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(T > 0.0)) throw ConfigError("T must be positive");
    if (I < 1) throw ConfigError("I must be >= 1");
    for (const double dl : delta)
        if (!std::isfinite(dl)) throw ConfigError("delta entries must be finite");
    if (!(sigma() > 0.0))
        throw ConfigError("dirac surrogate width must resolve positive "
                          "(check dirac_sigma / dirac_factor)");
    if (!(row_mass_lo < 1.0 && 1.0 < row_mass_hi))
        throw ConfigError("row-mass band [row_mass_lo, row_mass_hi] must bracket 1");
    if (!(mass_tol > 0.0) || !(eigen_tol > 0.0) || !(rcond_floor > 0.0) ||
        !(residual_tol > 0.0) || !(response_mass_warn > 0.0))
        throw ConfigError("tolerances must be positive");
    if (eigen_max_iters == 0) throw ConfigError("eigen_max_iters must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must be nonempty");
    // trips the module-level preconditions early: grid shape, domain snapping,
    // potential/observable plausibility
    const UniformGrid1D g = make_grid();
    restrict_to_domain(g, d);
    make_axis();
    if (potential != "tabulated") make_potential();   // file load deferred to run time
    else if (potential_file.empty())
        throw ConfigError("potential = tabulated requires potential_file");
    if (observable != "tabulated") make_observable();
    else if (observable_file.empty())
        throw ConfigError("observable = tabulated requires observable_file");
}

inline std::string ExperimentConfig::serialize() const {
    std::ostringstream os;
    os << "potential = " << potential << "\n";
    os << "curvature = " << format_double(curvature) << "\n";
    os << "potential_file = " << potential_file << "\n";
    os << "eps = " << format_double(eps) << "\n";
    os << "T = " << format_double(T) << "\n";
    os << "a = " << format_double(a) << "\n";
    os << "d = " << format_double(d) << "\n";
    os << "n = " << n << "\n";
    os << "m = " << m << "\n";
    os << "I = " << I << "\n";
    os << "J = " << J << "\n";
    os << "delta = ";
    for (std::size_t k = 0; k < delta.size(); ++k)
        os << (k ? "," : "") << format_double(delta[k]);
    os << "\n";
    os << "observable = " << observable << "\n";
    os << "observable_mean = " << format_double(observable_mean) << "\n";
    os << "observable_sigma = " << format_double(observable_sigma) << "\n";
    os << "observable_file = " << observable_file << "\n";
    os << "constraint_axis = " << constraint_axis << "\n";
    os << "seed = " << seed << "\n";
    os << "threads = " << threads << "\n";
    os << "dirac_sigma = " << format_double(dirac_sigma) << "\n";
    os << "dirac_factor = " << format_double(dirac_factor) << "\n";
    os << "mass_tol = " << format_double(mass_tol) << "\n";
    os << "row_mass_lo = " << format_double(row_mass_lo) << "\n";
    os << "row_mass_hi = " << format_double(row_mass_hi) << "\n";
    os << "positivity_floor = " << format_double(positivity_floor) << "\n";
    os << "eigen_tol = " << format_double(eigen_tol) << "\n";
    os << "eigen_max_iters = " << eigen_max_iters << "\n";
    os << "rcond_floor = " << format_double(rcond_floor) << "\n";
    os << "residual_tol = " << format_double(residual_tol) << "\n";
    os << "response_mass_warn = " << format_double(response_mass_warn) << "\n";
    os << "output_dir = " << output_dir << "\n";
    return os.str();
}

/* Apply one "key = value" assignment.  Unknown keys are rejected by name;
 * a later assignment of the same key wins. */
inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
    using detail::parse_double_list;
    using detail::parse_double_value;
    using detail::parse_uint_value;
    if (key == "potential") cfg.potential = value;
    else if (key == "curvature") cfg.curvature = parse_double_value(key, value);
    else if (key == "potential_file") cfg.potential_file = value;
    else if (key == "eps") cfg.eps = parse_double_value(key, value);
    else if (key == "T") cfg.T = parse_double_value(key, value);
    else if (key == "a") cfg.a = parse_double_value(key, value);
    else if (key == "d") cfg.d = parse_double_value(key, value);
    else if (key == "n") cfg.n = static_cast<std::size_t>(parse_uint_value(key, value));
    else if (key == "m") cfg.m = static_cast<std::size_t>(parse_uint_value(key, value));
    else if (key == "I") cfg.I = static_cast<unsigned>(parse_uint_value(key, value));
    else if (key == "J") cfg.J = static_cast<unsigned>(parse_uint_value(key, value));
    else if (key == "delta") cfg.delta = parse_double_list(key, value);
    else if (key == "observable") cfg.observable = value;
    else if (key == "observable_mean") cfg.observable_mean = parse_double_value(key, value);
    else if (key == "observable_sigma") cfg.observable_sigma = parse_double_value(key, value);
    else if (key == "observable_file") cfg.observable_file = value;
    else if (key == "constraint_axis") cfg.constraint_axis = value;
    else if (key == "seed") cfg.seed = parse_uint_value(key, value);
    else if (key == "threads") cfg.threads = static_cast<unsigned>(parse_uint_value(key, value));
    else if (key == "dirac_sigma") cfg.dirac_sigma = parse_double_value(key, value);
    else if (key == "dirac_factor") cfg.dirac_factor = parse_double_value(key, value);
    else if (key == "mass_tol") cfg.mass_tol = parse_double_value(key, value);
    else if (key == "row_mass_lo") cfg.row_mass_lo = parse_double_value(key, value);
    else if (key == "row_mass_hi") cfg.row_mass_hi = parse_double_value(key, value);
    else if (key == "positivity_floor") cfg.positivity_floor = parse_double_value(key, value);
    else if (key == "eigen_tol") cfg.eigen_tol = parse_double_value(key, value);
    else if (key == "eigen_max_iters")
        cfg.eigen_max_iters = static_cast<std::size_t>(parse_uint_value(key, value));
    else if (key == "rcond_floor") cfg.rcond_floor = parse_double_value(key, value);
    else if (key == "residual_tol") cfg.residual_tol = parse_double_value(key, value);
    else if (key == "response_mass_warn")
        cfg.response_mass_warn = parse_double_value(key, value);
    else if (key == "output_dir") cfg.output_dir = value;
    else
        throw ConfigError("unknown config key '" + key + "'");
}

inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::vector<std::string>& overrides = {}) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not of the form 'key = value': '" + line + "'");
        apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
    }
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override is not of the form key=value: '" + ov + "'");
        apply_config_entry(cfg, detail::trim(ov.substr(0, eq)), detail::trim(ov.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path,
                                     const std::vector<std::string>& overrides = {}) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config file not readable: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), overrides);
}

}  // namespace ortk
