#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pcagee/mortality_data.hpp"

using namespace pcagee;

namespace {

const char* kPreamble = "Testland, Deaths (period 1x1)\tLast modified: 01 Jan 2020\n\n";

std::string table_text(const std::string& rows) {
  return std::string(kPreamble) + "  Year      Age        Female          Male         Total\n" + rows;
}

/// Deaths and exposures over years x ages with smooth positive values.
CountryTables synthetic_tables(const std::string& country, int y0, int y1, int a0, int a1) {
  CountryTables ct;
  ct.country = country;
  for (int y = y0; y <= y1; ++y)
    for (int a = a0; a <= a1; ++a) {
      CountRow d{y, a, false, 10.0 + a + 0.1 * (y - y0), 12.0 + a, std::nullopt};
      CountRow e{y, a, false, 1e4 + 10.0 * a, 1.1e4 + 7.0 * a, std::nullopt};
      ct.deaths.add(d);
      ct.exposures.add(e);
    }
  return ct;
}

PanelConfig small_config(const std::string& country) {
  PanelConfig cfg;
  cfg.populations = {{country, Sex::female}, {country, Sex::male}};
  cfg.train_years = {1991, 2010};
  cfg.test_years = {2011, 2012};
  return cfg;
}

}  // namespace

TEST(ParseHmd, ReadsRowsAndOpenInterval) {
  const auto t = parse_hmd_table(table_text("  1991  20  0.000312  0.000501  0.000406\n"
                                            "  1991  110+  1.5  .  2.5\n"),
                                 CountKind::exposures);
  ASSERT_EQ(t.rows().size(), 2u);
  const CountRow* r = t.find(1991, 20);
  ASSERT_NE(r, nullptr);
  EXPECT_EQ(*r->female, 0.000312);
  EXPECT_EQ(*r->male, 0.000501);
  EXPECT_EQ(*r->total, 0.000406);
  const CountRow* open = t.find(1991, 110);
  ASSERT_NE(open, nullptr);
  EXPECT_TRUE(open->open_interval);
  EXPECT_FALSE(open->male.has_value());
  EXPECT_EQ(*open->female, 1.5);
}

TEST(ParseHmd, NegativeValueReportsLine) {
  try {
    parse_hmd_table(table_text("  1991  20  1  2  3\n  1991  21  -1  2  1\n"), CountKind::deaths);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5u);
  }
}

TEST(ParseHmd, MalformedRowReportsLine) {
  try {
    parse_hmd_table(table_text("  1991  20  1  2\n"), CountKind::deaths);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
  }
  EXPECT_THROW(parse_hmd_table(table_text("  1991  2x  1  2  3\n"), CountKind::deaths), ParseError);
  EXPECT_THROW(parse_hmd_table(table_text("  1991  20  abc  2  3\n"), CountKind::deaths), ParseError);
}

TEST(ParseHmd, BadHeaderRejected) {
  EXPECT_THROW(parse_hmd_table(std::string(kPreamble) + "Year Age F M T\n", CountKind::deaths), ParseError);
  EXPECT_THROW(parse_hmd_table(std::string("only one line\n"), CountKind::deaths), ParseError);
}

TEST(ParseHmd, DuplicateRowIsIntegrityError) {
  EXPECT_THROW(parse_hmd_table(table_text("  1991  20  1  2  3\n  1991  20  1  2  3\n"), CountKind::deaths),
               IntegrityError);
}

TEST(ParseHmd, RoundTripIsValueIdentical) {
  const auto t = parse_hmd_table(table_text("  1991  20  0.1  0.30000000000000004  .\n"
                                            "  1991  110+  12345.678  1e-7  7\n"),
                                 CountKind::deaths);
  std::ostringstream os;
  write_hmd_table(os, t);
  const auto u = parse_hmd_table(os.str(), CountKind::deaths);
  ASSERT_EQ(t.rows().size(), u.rows().size());
  for (std::size_t i = 0; i < t.rows().size(); ++i) {
    const auto &a = t.rows()[i], &b = u.rows()[i];
    EXPECT_EQ(a.year, b.year);
    EXPECT_EQ(a.age, b.age);
    EXPECT_EQ(a.open_interval, b.open_interval);
    EXPECT_EQ(a.female, b.female);
    EXPECT_EQ(a.male, b.male);
    EXPECT_EQ(a.total, b.total);
  }
}

TEST(Asdr, ClosedFormValues) {
  EXPECT_EQ(asdr_from_counts(0.0, 1000.0), 0.0);
  EXPECT_NEAR(asdr_from_counts(250.0, 250.0), 0.6321206, 5e-8);
  // 1 - exp(-0.0005) evaluated by series to 15 digits.
  EXPECT_NEAR(asdr_from_counts(5.0, 10000.0), 4.99875020830729e-4, 1e-17);
  EXPECT_THROW(asdr_from_counts(1.0, 0.0), DomainError);
  EXPECT_THROW(asdr_from_counts(1.0, -2.0), DomainError);
  EXPECT_THROW(asdr_from_counts(-1.0, 2.0), DomainError);
}

TEST(Asdr, MonotoneAndInvertible) {
  const double e = 12345.0;
  double prev = -1.0;
  for (double d = 0.0; d < 5000.0; d += 37.5) {
    const double q = asdr_from_counts(d, e);
    EXPECT_GT(q, prev);
    prev = q;
    if (d > 0.0) {
      EXPECT_NEAR(-e * std::log1p(-q) / d, 1.0, 1e-10);
    }
  }
}

TEST(Asdr, CentralRate) { EXPECT_EQ(rate_from_counts(5.0, 100.0, RateKind::m), 0.05); }

TEST(Bands, PaperBoundaries) {
  EXPECT_EQ(band_of(0), AgeBand::children);
  EXPECT_EQ(band_of(19), AgeBand::children);
  EXPECT_EQ(band_of(20), AgeBand::young_adults);
  EXPECT_EQ(band_of(50), AgeBand::young_adults);
  EXPECT_EQ(band_of(51), AgeBand::older_adults);
  EXPECT_EQ(band_of(110), AgeBand::older_adults);
}

TEST(Bands, PartitionWithoutGapsOrOverlaps) {
  for (int lo : {0, 15, 20, 45}) {
    for (int hi : {60, 80, 100}) {
      int covered = 0;
      for (AgeBand b : kAllBands) {
        const auto [a, z] = band_ages(b, lo, hi);
        if (a > z) continue;
        for (int x = a; x <= z; ++x) EXPECT_EQ(band_of(x), b);
        covered += z - a + 1;
      }
      EXPECT_EQ(covered, hi - lo + 1);
    }
  }
  const auto [a, z] = band_ages(AgeBand::children, 20, 80);
  EXPECT_GT(a, z);  // absent band
}

TEST(BuildPanel, CountsCellsAndAnnotations) {
  PanelConfig cfg = small_config("AAA");
  cfg.test_years = {2011, 2011};
  const auto panel = build_panel(synthetic_tables("AAA", 1985, 2015, 0, 110), cfg);
  const auto train = panel.restrict_years(1991, 2010);
  EXPECT_EQ(train.n_cells(), 2440u);
  EXPECT_EQ(panel.n_cells(), 2u * 61u * 21u);
  for (std::size_t p = 0; p < panel.populations.size(); ++p)
    for (int age = 20; age <= 80; ++age)
      for (int year = 1991; year <= 2011; ++year) {
        const double q = std::exp(panel.y(p, age, year));
        EXPECT_GT(q, 0.0);
        EXPECT_LT(q, 1.0);
        const double d = panel.deaths[p](age - 20, year - 1991), e = panel.exposures[p](age - 20, year - 1991);
        EXPECT_NEAR(-e * std::log1p(-q), d, 1e-10 * d);
      }
  std::ostringstream os;
  write_panel_csv(os, train);
  std::istringstream in(os.str());
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "country,gender,age,year,cohort,band,deaths,exposure,q,y");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2440u);
  EXPECT_NE(os.str().find("AAA,female,20,1991,1971,young_adults,"), std::string::npos);
}

TEST(BuildPanel, ZeroDeathCellRule) {
  auto ct = synthetic_tables("AAA", 1991, 2012, 20, 80);
  CountryTables z;
  z.country = "AAA";
  z.exposures = ct.exposures;
  for (const auto& r : ct.deaths.rows()) {
    CountRow c = r;
    if (r.year == 2000 && r.age == 33) c.male = 0.0;
    z.deaths.add(c);
  }
  PanelConfig cfg = small_config("AAA");
  try {
    build_panel(z, cfg);
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("AAA:male"), std::string::npos);
    EXPECT_NE(msg.find("age 33"), std::string::npos);
    EXPECT_NE(msg.find("year 2000"), std::string::npos);
  }
  cfg.zero_cell_rule = true;
  const auto panel = build_panel(z, cfg);
  ASSERT_EQ(panel.substitutions.size(), 1u);
  EXPECT_EQ(panel.substitutions[0].age, 33);
  const auto mi = *panel.find({"AAA", Sex::male});
  const double e = panel.exposures[mi](13, 9);
  EXPECT_DOUBLE_EQ(panel.y(mi, 33, 2000), std::log(-std::expm1(-0.5 / e)));
}

TEST(BuildPanel, MissingCellsAndValues) {
  auto ct = synthetic_tables("AAA", 1991, 2012, 20, 79);
  EXPECT_THROW(build_panel(ct, small_config("AAA")), IntegrityError);  // age 80 absent

  auto full = synthetic_tables("AAA", 1991, 2012, 20, 80);
  CountryTables gap;
  gap.country = "AAA";
  gap.deaths = full.deaths;
  for (const auto& r : full.exposures.rows()) {
    CountRow c = r;
    if (r.year == 1995 && r.age == 40) c.female.reset();
    gap.exposures.add(c);
  }
  EXPECT_THROW(build_panel(gap, small_config("AAA")), IntegrityError);
  EXPECT_THROW(build_panel(full, small_config("BBB")), IntegrityError);
}

TEST(BuildPanel, ConfigValidation) {
  PanelConfig cfg = small_config("AAA");
  cfg.test_years = {2010, 2012};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config("AAA");
  cfg.populations.push_back({"AAA", Sex::male});
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config("AAA");
  cfg.populations.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Panel, RestrictAndSelect) {
  const auto panel = build_panel(synthetic_tables("AAA", 1991, 2012, 20, 80), small_config("AAA"));
  const auto train = panel.restrict_years(1991, 2010);
  EXPECT_EQ(train.n_years(), 20);
  EXPECT_EQ(train.y(1, 50, 2005), panel.y(1, 50, 2005));
  EXPECT_THROW(panel.restrict_years(1990, 2000), DomainError);
  const auto male = panel.select({{"AAA", Sex::male}});
  ASSERT_EQ(male.populations.size(), 1u);
  EXPECT_EQ(male.y(0, 60, 2012), panel.y(1, 60, 2012));
  EXPECT_THROW(panel.select({{"ZZZ", Sex::male}}), IntegrityError);
}
