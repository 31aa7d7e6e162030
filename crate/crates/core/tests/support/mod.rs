pub mod three_vehicle;
