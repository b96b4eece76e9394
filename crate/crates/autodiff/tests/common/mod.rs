pub mod op_cases;
