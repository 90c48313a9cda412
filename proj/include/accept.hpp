#pragma once

#include <accept/contrastive.hpp>
#include <accept/curve_bank.hpp>
#include <accept/curve_fitting.hpp>
#include <accept/data_pipeline.hpp>
#include <accept/degradation_model.hpp>
#include <accept/encoders.hpp>
#include <accept/error.hpp>
#include <accept/inference.hpp>
#include <accept/model.hpp>
#include <accept/plot.hpp>
#include <accept/util.hpp>
