#include <gtest/gtest.h>

#include <string>

#include "kdgm/config.hpp"

using namespace kdgm;

namespace {

std::string error_of(const json& j, const std::vector<std::string>& overrides = {}) {
  try {
    resolve_config(j, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsWithoutModel) {
  const auto rc = resolve_config(json::object());
  EXPECT_FALSE(rc.model.has_value());
  EXPECT_THROW(rc.require_model(), ConfigError);
  EXPECT_EQ(rc.train.width, 50u);
  EXPECT_EQ(rc.train.layers, 3u);
  EXPECT_EQ(rc.train.lr_schedule.at(1), 1e-4);
  EXPECT_EQ(rc.train.lr_schedule.pieces().size(), LrSchedule::standard().pieces().size());
  EXPECT_TRUE(rc.cases.empty());
}

TEST(Config, ModelDefaultsFollowKind) {
  const auto g = resolve_config(json{{"model", "gbm"}});
  EXPECT_EQ(g.train.lambda, 10.0);
  EXPECT_EQ(g.domain->dim(), 4u);
  const auto h = resolve_config(json{{"model", "heston"}});
  EXPECT_EQ(h.train.lambda, 100.0);
  EXPECT_EQ(h.domain->dim(), 9u);
  EXPECT_EQ(h.pde_model().kind(), ModelKind::Heston);
}

TEST(Config, OverridesApplyAfterFile) {
  const json file{{"model", "gbm"}, {"train", {{"epochs", 10}, {"seed", 3}}}};
  const auto rc = resolve_config(file, {"train.epochs=25", "train.lambda=1", "output.csv=out.csv"});
  EXPECT_EQ(rc.train.epochs, 25u);
  EXPECT_EQ(rc.train.seed, 3u);
  EXPECT_EQ(rc.train.lambda, 1.0);
  EXPECT_EQ(rc.out_csv, "out.csv");
}

TEST(Config, MalformedOverride) {
  EXPECT_NE(error_of(json::object(), {"train.epochs"}).find("key=value"), std::string::npos);
}

TEST(Config, UnknownFieldNamed) {
  EXPECT_NE(error_of(json{{"model", "gbm"}, {"trian", json::object()}}).find("'trian'"), std::string::npos);
  EXPECT_NE(error_of(json{{"model", "gbm"}, {"train", {{"epoch", 3}}}}).find("'train.epoch'"), std::string::npos);
  EXPECT_NE(error_of(json{{"model", "gbm"}}, {"mc.path=3"}).find("'mc.path'"), std::string::npos);
}

TEST(Config, MissingFieldNamed) {
  // A null value deletes the default, leaving the field unset.
  const auto msg = error_of(json{{"model", "gbm"}, {"train", {{"epochs", nullptr}}}});
  EXPECT_NE(msg.find("missing required config field 'train.epochs'"), std::string::npos) << msg;
  const auto k = error_of(json{{"model", "gbm"}, {"price", {{"cases", {{{"T", 1.0}}}}}}});
  EXPECT_NE(k.find("'price.cases[0].K'"), std::string::npos) << k;
}

TEST(Config, WrongTypeNamed) {
  const auto msg = error_of(json{{"model", "gbm"}, {"train", {{"width", "wide"}}}});
  EXPECT_NE(msg.find("'train.width'"), std::string::npos) << msg;
}

TEST(Config, UnknownModel) { EXPECT_THROW(resolve_config(json{{"model", "sabr"}}), ConfigError); }

TEST(Config, DomainMergesPerCoordinate) {
  const auto rc = resolve_config(json{{"model", "gbm"}, {"domain", {{"x", {-0.5, 0.5}}}}});
  const auto def = PdeModel::default_domain(ModelKind::Gbm);
  EXPECT_EQ((*rc.domain)[1].lo, -0.5);
  EXPECT_EQ((*rc.domain)[1].hi, 0.5);
  EXPECT_EQ((*rc.domain)[2].lo, def[2].lo);
  EXPECT_EQ((*rc.domain)[3].hi, def[3].hi);
}

TEST(Config, DomainErrors) {
  EXPECT_NE(error_of(json{{"model", "gbm"}, {"domain", {{"v", {0, 1}}}}}).find("'v'"), std::string::npos);
  EXPECT_THROW(resolve_config(json{{"domain", {{"x", {0, 1}}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"model", "gbm"}, {"domain", {{"x", {1}}}}}), ConfigError);
}

TEST(Config, LrScheduleParsing) {
  const auto rc = resolve_config(json{{"train", {{"lr_schedule", {{100, 1e-3}, {nullptr, 1e-4}}}}}});
  EXPECT_EQ(rc.train.lr_schedule.at(100), 1e-3);
  EXPECT_EQ(rc.train.lr_schedule.at(101), 1e-4);
  EXPECT_THROW(resolve_config(json{{"train", {{"lr_schedule", {{-5, 1e-3}}}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"train", {{"lr_schedule", json::array()}}}}), ConfigError);
}

TEST(Config, PriceCases) {
  const json file{{"model", "gbm"},
                  {"price", {{"cases", {{{"K", 1.1}, {"type", "put"}, {"sigma", 0.3}}, {{"K", 0.9}}}}}}};
  const auto rc = resolve_config(file);
  ASSERT_EQ(rc.cases.size(), 2u);
  EXPECT_EQ(rc.cases[0].type, OptionType::Put);
  EXPECT_EQ(rc.cases[0].sigma, 0.3);
  EXPECT_EQ(rc.cases[1].type, OptionType::Call);
  EXPECT_THROW(resolve_config(json{{"price", {{"cases", {{{"K", 1.0}, {"type", "digital"}}}}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"price", {{"cases", {{{"K", -1.0}}}}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"price", {{"cases", {{{"K", 1.0}, {"strike", 1.0}}}}}}}), ConfigError);
}

TEST(Config, ValidationOfNestedSections) {
  EXPECT_THROW(resolve_config(json::object(), {"density.delta=0"}), ConfigError);
  EXPECT_THROW(resolve_config(json::object(), {"mc.paths=10"}), ConfigError);
  EXPECT_THROW(resolve_config(json::object(), {"price.engine=magic"}), ConfigError);
  EXPECT_THROW(resolve_config(json::object(), {"train.checkpoint=best"}), ConfigError);
}

TEST(Config, ResolvedEchoIsStable) {
  const auto a = resolve_config(json{{"model", "gbm"}}, {"train.epochs=5"});
  const auto b = resolve_config(json{{"model", "gbm"}, {"train", {{"epochs", 5}}}});
  EXPECT_EQ(a.echo(), b.echo());
  EXPECT_EQ(resolve_config(json::parse(a.echo())).echo(), a.echo());
}

TEST(ConfigFile, CommentsAllowedAndShippedConfigsParse) {
  for (const char* name : {"gbm", "heston", "td_heston"}) {
    const auto path = std::string(KDGM_CONFIG_DIR) + "/" + name + ".json";
    const auto rc = resolve_config(read_config_file(path));
    EXPECT_EQ(model_kind_name(rc.require_model()), name);
    EXPECT_FALSE(rc.cases.empty()) << name;
  }
}

TEST(ConfigFile, MissingOrInvalidFile) {
  EXPECT_THROW(read_config_file("/nonexistent/kdgm.json"), ConfigError);
}
