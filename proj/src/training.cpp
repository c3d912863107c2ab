#include "permakey/training.hpp"

#include <cmath>
#include <iostream>

#include "permakey/dataset.hpp"
#include "permakey/errors.hpp"

namespace permakey {

nlohmann::json OptimSchedule::to_json() const {
  return {{"learning_rate", learning_rate}, {"decay_rate", decay_rate},
          {"decay_steps", decay_steps},     {"batch_size", batch_size},
          {"epochs", epochs},               {"patience", patience},
          {"max_batches_per_epoch", max_batches_per_epoch},
          {"seed", seed}};
}

OptimSchedule OptimSchedule::from_json(const nlohmann::json& j) {
  OptimSchedule s;
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.decay_rate = j.value("decay_rate", s.decay_rate);
  s.decay_steps = j.value("decay_steps", s.decay_steps);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.epochs = j.value("epochs", s.epochs);
  s.patience = j.value("patience", s.patience);
  s.max_batches_per_epoch =
      j.value("max_batches_per_epoch", s.max_batches_per_epoch);
  s.seed = j.value("seed", s.seed);
  return s;
}

double scheduled_learning_rate(const OptimSchedule& schedule, int64_t step) {
  return schedule.learning_rate *
         std::pow(schedule.decay_rate,
                  static_cast<double>(step) /
                      static_cast<double>(schedule.decay_steps));
}

nlohmann::json TrainHistory::to_json() const {
  return {{"train_loss", train_loss}, {"val_loss", val_loss},
          {"best_epoch", best_epoch}, {"best_val_loss", best_val_loss},
          {"steps", steps},           {"early_stopped", early_stopped}};
}

double optimizer_step(torch::optim::Optimizer& opt, const torch::Tensor& loss) {
  opt.zero_grad();
  loss.backward();
  opt.step();
  return loss.item<double>();
}

namespace {

struct StateCopy {
  std::vector<torch::Tensor> params;
  std::vector<torch::Tensor> buffers;
};

StateCopy copy_state(torch::nn::Module& m) {
  StateCopy s;
  for (auto& p : m.parameters()) s.params.push_back(p.detach().clone());
  for (auto& b : m.buffers()) s.buffers.push_back(b.detach().clone());
  return s;
}

void restore_state(torch::nn::Module& m, const StateCopy& s) {
  torch::NoGradGuard no_grad;
  auto params = m.parameters();
  auto buffers = m.buffers();
  for (size_t i = 0; i < params.size(); ++i) params[i].copy_(s.params[i]);
  for (size_t i = 0; i < buffers.size(); ++i) buffers[i].copy_(s.buffers[i]);
}

}  // namespace

TrainHistory fit(torch::nn::Module& module, int64_t n_train,
                 const OptimSchedule& schedule, const BatchLossFn& batch_loss,
                 const ValidationFn& validation_loss,
                 const std::string& log_name) {
  if (n_train < 1) throw SizeError("training set is empty");
  torch::optim::Adam opt(module.parameters(),
                         torch::optim::AdamOptions(schedule.learning_rate));
  TrainHistory history;
  StateCopy best = copy_state(module);
  int64_t since_best = 0;
  for (int64_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    module.train();
    auto batches =
        epoch_batches(n_train, schedule.batch_size, schedule.seed, epoch);
    if (schedule.max_batches_per_epoch > 0 &&
        static_cast<int64_t>(batches.size()) > schedule.max_batches_per_epoch)
      batches.resize(static_cast<size_t>(schedule.max_batches_per_epoch));
    double total = 0.0;
    for (const auto& batch : batches) {
      const double lr = scheduled_learning_rate(schedule, history.steps);
      for (auto& group : opt.param_groups())
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
      total += optimizer_step(opt, batch_loss(batch));
      ++history.steps;
    }
    history.train_loss.push_back(total / static_cast<double>(batches.size()));
    module.eval();
    double val;
    {
      torch::NoGradGuard no_grad;
      val = validation_loss();
    }
    history.val_loss.push_back(val);
    if (!log_name.empty())
      std::cerr << "[" << log_name << "] epoch " << epoch << " train "
                << history.train_loss.back() << " val " << val << "\n";
    if (val < history.best_val_loss) {
      history.best_val_loss = val;
      history.best_epoch = epoch;
      best = copy_state(module);
      since_best = 0;
    } else if (++since_best >= schedule.patience) {
      history.early_stopped = true;
      break;
    }
  }
  restore_state(module, best);
  module.eval();
  return history;
}

void save_checkpoint(const std::filesystem::path& path,
                     torch::nn::Module& module, const nlohmann::json& config) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  module.save(archive);
  archive.write("permakey_config", c10::IValue(config.dump()));
  archive.save_to(path.string());
}

nlohmann::json read_checkpoint_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw IoError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue value;
  if (!archive.try_read("permakey_config", value))
    throw IoError("checkpoint has no config: " + path.string());
  return nlohmann::json::parse(value.toStringRef());
}

void load_checkpoint_weights(const std::filesystem::path& path,
                             torch::nn::Module& module) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  module.load(archive);
}

}  // namespace permakey
